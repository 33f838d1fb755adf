#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "mcl/error.hpp"
#include "mcl/rng.hpp"

namespace mcl::rl {

inline constexpr double kMaxAction = 0.1;
inline constexpr double kGoalRange = 0.5;
inline constexpr double kGoalRadius = 0.01;
inline constexpr std::size_t kHorizon = 100;

using Vec2 = std::array<double, 2>;

inline double distance(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

struct NavTask {
  Vec2 goal{0, 0};
};

inline NavTask sample_nav_task(Rng& rng) {
  return {{uniform(rng, -kGoalRange, kGoalRange), uniform(rng, -kGoalRange, kGoalRange)}};
}

struct EnvState {
  Vec2 position{0, 0};
  std::size_t t = 0;
};

struct StepResult {
  EnvState state;
  double reward = 0;
  bool done = false;
};

/// Every episode starts at the origin; `rng` is unused but kept so a
/// randomized start distribution can be swapped in.
inline EnvState env_reset(const NavTask&, Rng&) { return {}; }

inline double clip_action(double a) { return std::clamp(a, -kMaxAction, kMaxAction); }

/// Moves by the clipped action. Reward is minus the distance to the goal
/// after the move; the episode ends inside the goal radius or at the horizon.
inline StepResult env_step(const NavTask& task, const EnvState& s, const Vec2& action,
                           std::size_t horizon = kHorizon) {
  if (!std::isfinite(action[0]) || !std::isfinite(action[1])) throw ContractError("env_step: non-finite action");
  StepResult r;
  r.state.position = {s.position[0] + clip_action(action[0]), s.position[1] + clip_action(action[1])};
  r.state.t = s.t + 1;
  const double dist = distance(r.state.position, task.goal);
  r.reward = -dist;
  r.done = dist < kGoalRadius || r.state.t >= horizon;
  return r;
}

struct Transition {
  std::array<float, 2> observation{};  // position before the move
  std::array<float, 2> action{};       // clipped, as applied
  std::array<float, 2> sample{};       // raw policy sample, for log-likelihoods
  float reward = 0;
};

struct Trajectory {
  std::vector<Transition> steps;
  Vec2 final_position{0, 0};
  double final_distance = 0;

  std::size_t size() const { return steps.size(); }

  double discounted_return(double gamma) const {
    double g = 0, w = 1;
    for (const auto& s : steps) {
      g += w * s.reward;
      w *= gamma;
    }
    return g;
  }

  double total_reward() const { return discounted_return(1.0); }
};

/// G_t = sum_{k >= t} gamma^(k-t) r_k, computed backwards.
inline std::vector<double> returns_to_go(const Trajectory& traj, double gamma) {
  std::vector<double> g(traj.size());
  double acc = 0;
  for (std::size_t t = traj.size(); t-- > 0;) {
    acc = traj.steps[t].reward + gamma * acc;
    g[t] = acc;
  }
  return g;
}

inline std::size_t count_transitions(const std::vector<Trajectory>& trajs) {
  std::size_t n = 0;
  for (const auto& t : trajs) n += t.size();
  return n;
}

}  // namespace mcl::rl
