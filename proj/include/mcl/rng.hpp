#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mcl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent generator for a named stream and a counter.
///
/// All randomness in a run comes from one base seed. Streams are keyed by
/// name ("data", "init", "episodes", "rollouts", ...) and an index, so that
/// e.g. evaluation episode i always sees the same draws regardless of which
/// worker runs it.
inline Rng stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
  std::uint64_t s = splitmix64(seed ^ splitmix64(fnv1a(name)));
  s = splitmix64(s + splitmix64(index + 0x632be59bd9b4e019ULL));
  return Rng(s);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace mcl
