#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mcl/rl/policy.hpp"

namespace mcl::rl {

/// Value baseline linear in [o, |o|^2, t / horizon, 1], fit to the
/// returns-to-go of one batch by (lightly ridged) least squares. Returns
/// the fitted value of every transition.
inline std::vector<double> fit_value_baseline(const std::vector<Trajectory>& trajs, const std::vector<double>& returns,
                                              std::size_t horizon) {
  const std::size_t n = count_transitions(trajs);
  if (returns.size() != n) throw DimensionError("fit_value_baseline: one return per transition expected");
  constexpr int kFeatures = 5;
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), kFeatures);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  Eigen::Index i = 0;
  for (const auto& traj : trajs)
    for (std::size_t t = 0; t < traj.size(); ++t, ++i) {
      const double ox = traj.steps[t].observation[0], oy = traj.steps[t].observation[1];
      X.row(i) << ox, oy, ox * ox + oy * oy, double(t) / double(horizon), 1.0;
      y(i) = returns[static_cast<std::size_t>(i)];
    }
  Eigen::MatrixXd A = X.transpose() * X;
  A.diagonal().array() += 1e-6 * (1.0 + A.diagonal().maxCoeff());
  const Eigen::VectorXd w = A.ldlt().solve(X.transpose() * y);
  const Eigen::VectorXd v = X * w;
  return {v.data(), v.data() + v.size()};
}

/// Returns-to-go minus the fitted baseline, then standardized. If every
/// advantage is (numerically) the same, standardization is skipped.
inline std::vector<float> compute_advantages(const std::vector<Trajectory>& trajs, double gamma, std::size_t horizon,
                                             bool normalize = true) {
  std::vector<double> g;
  for (const auto& traj : trajs) {
    auto r = returns_to_go(traj, gamma);
    g.insert(g.end(), r.begin(), r.end());
  }
  if (g.empty()) throw EmptySetError("compute_advantages: no transitions");
  const auto v = fit_value_baseline(trajs, g, horizon);
  double scale = 0;
  for (double a : g) scale = std::max(scale, std::abs(a));
  double mean = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] -= v[i];
    mean += g[i];
  }
  mean /= double(g.size());
  double var = 0;
  for (double a : g) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / double(g.size()));
  const bool degenerate = !(sd > 1e-6 * (1.0 + scale));
  std::vector<float> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    out[i] = static_cast<float>(normalize && !degenerate ? (g[i] - mean) / sd : g[i]);
  return out;
}

/// -mean_i A_i log pi(a_i | o_i); its gradient is the REINFORCE estimate.
inline Var<float> surrogate_loss(Var<float> features, Var<float> head, Var<float> log_std,
                                 const std::vector<Trajectory>& trajs, const std::vector<float>& advantages) {
  auto lp = policy_log_prob(features, head, log_std, trajs);
  std::vector<float> w(advantages.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = -advantages[i];
  return diff::weighted_mean(lp, std::move(w));
}

}  // namespace mcl::rl
