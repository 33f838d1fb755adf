#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "mcl/rng.hpp"

namespace mcl::tasks {

inline constexpr double kMinAmplitude = 0.1, kMaxAmplitude = 5.0;
inline constexpr double kInputLo = -5.0, kInputHi = 5.0;
inline constexpr std::size_t kGridPoints = 1000;

/// y = amplitude * sin(x + phase).
struct SinusoidTask {
  double amplitude = 1.0;
  double phase = 0.0;

  double operator()(double x) const { return amplitude * std::sin(x + phase); }
};

struct Points {
  std::vector<float> x, y;
  std::size_t size() const { return x.size(); }
};

inline SinusoidTask sample_sinusoid_task(Rng& rng) {
  SinusoidTask t;
  t.amplitude = uniform(rng, kMinAmplitude, kMaxAmplitude);
  t.phase = uniform(rng, 0.0, std::numbers::pi);
  return t;
}

/// n noise-free samples with x uniform in [-5, 5].
inline Points sample_points(const SinusoidTask& task, std::size_t n, Rng& rng) {
  if (n == 0) throw ContractError("sample_points: n must be >= 1");
  Points p;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = uniform(rng, kInputLo, kInputHi);
    p.x.push_back(static_cast<float>(x));
    p.y.push_back(static_cast<float>(task(double(p.x.back()))));
  }
  return p;
}

/// 1000 evenly spaced inputs over [-5, 5], endpoints included.
inline Points eval_grid(const SinusoidTask& task) {
  Points p;
  for (std::size_t i = 0; i < kGridPoints; ++i) {
    const double x = kInputLo + (kInputHi - kInputLo) * double(i) / double(kGridPoints - 1);
    p.x.push_back(static_cast<float>(x));
    p.y.push_back(static_cast<float>(task(double(p.x.back()))));
  }
  return p;
}

}  // namespace mcl::tasks
