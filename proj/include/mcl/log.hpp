#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <string_view>

namespace mcl::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

/// Threshold from MCL_LOG (error, info, debug); info when unset or unknown.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("MCL_LOG");
    if (!env) return Level::Info;
    const std::string_view v(env);
    if (v == "error") return Level::Error;
    if (v == "debug") return Level::Debug;
    return Level::Info;
  }();
  return level;
}

inline bool enabled(Level l) { return static_cast<int>(l) <= static_cast<int>(threshold()); }

inline void vwrite(Level l, const char* fmt, std::va_list args) {
  static constexpr const char* tags[] = {"error", "info", "debug"};
  std::fprintf(stderr, "[mcl %s] ", tags[static_cast<int>(l)]);
  std::vfprintf(stderr, fmt, args);
  std::fputc('\n', stderr);
}

#if defined(__GNUC__)
#define MCL_PRINTF_LIKE __attribute__((format(printf, 1, 2)))
#else
#define MCL_PRINTF_LIKE
#endif

#define MCL_LOG_LEVEL_FN(fn, level)                  \
  MCL_PRINTF_LIKE inline void fn(const char* fmt, ...) { \
    if (!enabled(level)) return;                     \
    std::va_list args;                               \
    va_start(args, fmt);                             \
    vwrite(level, fmt, args);                        \
    va_end(args);                                    \
  }

MCL_LOG_LEVEL_FN(error, Level::Error)
MCL_LOG_LEVEL_FN(info, Level::Info)
MCL_LOG_LEVEL_FN(debug, Level::Debug)

#undef MCL_LOG_LEVEL_FN

}  // namespace mcl::log
