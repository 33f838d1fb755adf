#pragma once

#include <chrono>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcl/io/checkpoint.hpp"
#include "mcl/io/config.hpp"

namespace mcl::io {

/// Record written next to every run's outputs. Its "config" object is a
/// complete resolved config, so `--config run_manifest.json` reruns it.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  RunConfig config;
  double wall_seconds = 0;
  nlohmann::json outputs = nlohmann::json::object();
};

inline nlohmann::json to_json(const RunManifest& r) {
  return {{"format", "mcl-run-manifest"},
          {"version", MCL_VERSION},
          {"command", r.command},
          {"argv", r.argv},
          {"config", to_json(r.config)},
          {"config_hash", config_hash(r.config)},
          {"seeds",
           {{"train", r.config.train.seed},
            {"pretrain", r.config.task.pretrain_cfg.seed},
            {"regress", r.config.regress.seed},
            {"rl", r.config.rl.seed}}},
          {"wall_seconds", r.wall_seconds},
          {"outputs", r.outputs}};
}

inline void write_run_manifest(const std::string& path, const RunManifest& r) {
  const std::string text = to_json(r).dump(2) + "\n";
  detail::write_file_atomic(path, text.data(), text.size());
}

/// Loads either a config document or a run manifest.
inline RunConfig load_config_or_manifest(const std::string& path) {
  const auto bytes = detail::read_file(path);
  const std::string text(bytes.begin(), bytes.end());
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path + ": invalid JSON at byte " + std::to_string(e.byte));
    }
    if (!j.contains("config")) throw ConfigError(path + ": run manifest has no config object");
    return from_json(j.at("config"));
  }
  return parse_config(text, path);
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace mcl::io
