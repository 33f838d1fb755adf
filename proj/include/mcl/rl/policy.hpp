#pragma once

#include <cmath>
#include <vector>

#include "mcl/components.hpp"
#include "mcl/diff/sgd.hpp"
#include "mcl/rl/env.hpp"
#include "mcl/tasks/encoders.hpp"

namespace mcl::rl {

using diff::Tape;
using diff::Tensor;
using diff::Var;
using tasks::Mlp;

inline constexpr std::size_t kObsDim = 2;
inline constexpr std::size_t kActionDim = 2;
inline constexpr std::size_t kTupleDim = kObsDim + kActionDim + 1;  // (o, a, r)
inline constexpr float kLogStdMin = -5.0f;
inline constexpr float kLogStdMax = 1.0f;

struct RlConfig {
  std::size_t hidden = 100;          // width of phi's two hidden layers; the head is hidden x 2
  std::size_t context_hidden = 100;  // width of phi' and of the task summary
  std::size_t component_count = 40;
  std::size_t support_rollouts = 20;
  std::size_t query_rollouts = 20;
  std::size_t eval_query_rollouts = 40;
  std::size_t eval_tasks = 20;
  std::size_t horizon = kHorizon;
  double gamma = 0.99;
  double lr = 0.003;  // Adam
  double beta = 0.5;
  AdaptConfig adapt{0.1, 0};
  std::size_t iterations = 300;
  std::size_t tasks_per_iter = 10;
  std::uint64_t seed = 1;
  std::size_t workers = 1;

  void validate() const {
    if (hidden == 0 || context_hidden == 0 || component_count == 0) throw ConfigError("rl sizes must be >= 1");
    if (support_rollouts == 0 || query_rollouts == 0 || eval_query_rollouts == 0)
      throw ConfigError("rl rollout counts must be >= 1");
    if (tasks_per_iter == 0 || eval_tasks == 0) throw ConfigError("rl task counts must be >= 1");
    if (horizon == 0) throw ConfigError("rl.horizon must be >= 1");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("rl.gamma must be in [0, 1]");
    if (!(lr >= 0.0)) throw ConfigError("rl.lr must be >= 0");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("rl.beta must be >= 0");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (adapt.steps > 0) adapt.validate();
  }
};

/// phi: observation -> features [F]; phi': (o, a, r) -> summary space;
/// bank over the flattened F x 2 head with score predictors theta; a
/// state-independent log-std per action dimension.
struct RlModel {
  Mlp body;
  Mlp context;
  ComponentBank<float> bank;
  Tensor<float> log_std;

  static RlModel create(const RlConfig& cfg) {
    cfg.validate();
    Rng rng = stream(cfg.seed, "init-rl");
    RlModel m;
    m.body = Mlp({kObsDim, cfg.hidden, cfg.hidden}, true, rng, "phi");
    m.context = Mlp({kTupleDim, cfg.context_hidden, cfg.context_hidden}, false, rng, "phi_ctx");
    m.bank = ComponentBank<float>::init(cfg.component_count, cfg.hidden * kActionDim, cfg.context_hidden, rng);
    m.log_std = Tensor<float>({kActionDim}, 0.0f);
    m.log_std.set_requires_grad(true);
    return m;
  }

  std::size_t feature_dim() const { return body.output_dim(); }

  diff::ParamList<float> params() {
    auto out = body.params();
    for (auto& p : context.params()) out.push_back(p);
    for (auto& p : bank.params()) out.push_back(p);
    out.push_back({"policy.log_std", "policy", &log_std});
    return out;
  }

  void set_trainable(bool on) {
    for (auto& p : params()) p.tensor->set_requires_grad(on);
  }
};

/// Frozen Gaussian policy: mean = phi(o) . W, std = exp(clamped log-std).
struct GaussianPolicy {
  Mlp body;
  Tensor<float> head;  // [F x 2]
  std::array<double, 2> std_dev{1, 1};

  static GaussianPolicy from(const RlModel& model, Tensor<float> head) {
    GaussianPolicy p{model.body, std::move(head), {}};
    p.body.set_trainable(false);
    for (std::size_t k = 0; k < kActionDim; ++k)
      p.std_dev[k] = std::exp(std::clamp(double(model.log_std[k]), double(kLogStdMin), double(kLogStdMax)));
    return p;
  }

  /// Action means for a batch of observations [B x 2] -> [B x 2].
  Tensor<float> means(const Tensor<float>& obs) {
    Tape<float> tape;
    return diff::matmul(body.forward(tape, obs), tape.constant(head)).value();
  }
};

/// Head used to collect support rollouts, before anything is known about
/// the task: all-zero, so actions are pure exploration noise around 0.
inline Tensor<float> prior_head(const RlModel& model) { return Tensor<float>({model.feature_dim(), kActionDim}); }

/// `count` rollouts from the origin. Rollout r draws its noise from its own
/// stream, seeded from one draw of `rng`, so batching does not matter.
inline std::vector<Trajectory> collect_rollouts(const NavTask& task, GaussianPolicy& policy, std::size_t count,
                                                Rng& rng, std::size_t horizon = kHorizon) {
  if (count == 0) throw ContractError("collect_rollouts: count must be >= 1");
  const std::uint64_t base = rng();
  std::vector<Rng> noise;
  std::vector<Trajectory> out(count);
  std::vector<EnvState> states(count);
  std::vector<std::size_t> active;
  for (std::size_t r = 0; r < count; ++r) {
    noise.push_back(stream(base, "rollout", r));
    states[r] = env_reset(task, noise.back());
    active.push_back(r);
  }
  while (!active.empty()) {
    Tensor<float> obs({active.size(), kObsDim});
    for (std::size_t i = 0; i < active.size(); ++i)
      for (std::size_t k = 0; k < kObsDim; ++k) obs.at(i, k) = static_cast<float>(states[active[i]].position[k]);
    const Tensor<float> mu = policy.means(obs);
    std::vector<std::size_t> still;
    for (std::size_t i = 0; i < active.size(); ++i) {
      const std::size_t r = active[i];
      Transition tr;
      Vec2 a;
      for (std::size_t k = 0; k < kActionDim; ++k) {
        a[k] = double(mu.at(i, k)) + policy.std_dev[k] * normal(noise[r]);
        tr.observation[k] = obs.at(i, k);
        tr.sample[k] = static_cast<float>(a[k]);
        tr.action[k] = static_cast<float>(clip_action(a[k]));
      }
      auto step = env_step(task, states[r], a, horizon);
      tr.reward = static_cast<float>(step.reward);
      out[r].steps.push_back(tr);
      states[r] = step.state;
      if (step.done) {
        out[r].final_position = step.state.position;
        out[r].final_distance = distance(step.state.position, task.goal);
      } else {
        still.push_back(r);
      }
    }
    active = std::move(still);
  }
  return out;
}

/// Rows (o, a, r) of every transition, in rollout then time order -> [n x 5].
inline Tensor<float> transition_tuples(const std::vector<Trajectory>& trajs) {
  Tensor<float> t({count_transitions(trajs), kTupleDim});
  std::size_t i = 0;
  for (const auto& traj : trajs)
    for (const auto& s : traj.steps) {
      t.at(i, 0) = s.observation[0];
      t.at(i, 1) = s.observation[1];
      t.at(i, 2) = s.action[0];
      t.at(i, 3) = s.action[1];
      t.at(i, 4) = s.reward;
      ++i;
    }
  return t;
}

/// Task summary p: mean of phi' over all support transitions.
inline Var<float> summarize_rollouts(Tape<float>& tape, Mlp& context, const std::vector<Trajectory>& support) {
  if (count_transitions(support) == 0) throw EmptySetError("summarize_rollouts: support has no transitions");
  return diff::mean_rows(context.forward(tape, transition_tuples(support)));
}

/// Head W [F x 2] = reshape(E^T z) with z_n = cos(p, theta_n).
inline Var<float> build_policy(Var<float> summary, Var<float> components, Var<float> predictors,
                               std::size_t feature_dim) {
  if (components.shape().size() != 2 || components.shape()[1] != feature_dim * kActionDim)
    throw DimensionError("build_policy: components must be [N x " + std::to_string(feature_dim * kActionDim) + "]");
  auto z = score_task(summary, predictors);
  return diff::reshape(build_head(components, z), {feature_dim, kActionDim});
}

inline Tensor<float> observations(const std::vector<Trajectory>& trajs) {
  Tensor<float> t({count_transitions(trajs), kObsDim});
  std::size_t i = 0;
  for (const auto& traj : trajs)
    for (const auto& s : traj.steps) {
      t.at(i, 0) = s.observation[0];
      t.at(i, 1) = s.observation[1];
      ++i;
    }
  return t;
}

inline Tensor<float> samples(const std::vector<Trajectory>& trajs) {
  Tensor<float> t({count_transitions(trajs), kActionDim});
  std::size_t i = 0;
  for (const auto& traj : trajs)
    for (const auto& s : traj.steps) {
      t.at(i, 0) = s.sample[0];
      t.at(i, 1) = s.sample[1];
      ++i;
    }
  return t;
}

/// log pi(sample | o) for every transition, given features phi(o) [n x F].
inline Var<float> policy_log_prob(Var<float> features, Var<float> head, Var<float> log_std,
                                  const std::vector<Trajectory>& trajs) {
  auto ls = diff::clamp(log_std, kLogStdMin, kLogStdMax);
  return diff::gaussian_log_prob(diff::matmul(features, head), ls, samples(trajs));
}

}  // namespace mcl::rl
