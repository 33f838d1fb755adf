#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "mcl/log.hpp"
#include "mcl/rl/reinforce.hpp"
#include "mcl/train/common.hpp"

namespace mcl::rl {

using train::Estimate;
using train::MetricsLog;

/// Support rollouts under the prior head, collected for one task.
inline std::vector<Trajectory> collect_support(const NavTask& task, const RlModel& model, const RlConfig& cfg,
                                               Rng& rng) {
  auto prior = GaussianPolicy::from(model, prior_head(model));
  return collect_rollouts(task, prior, cfg.support_rollouts, rng, cfg.horizon);
}

/// Task head from the support rollouts. With adaptation on, z is refined on
/// the support surrogate (advantage-weighted log-likelihood) with phi, phi',
/// E and the log-std frozen; the refinement enters the graph as a constant
/// offset so gradients still reach z's inputs.
inline Var<float> task_head(Tape<float>& tape, RlModel& model, const std::vector<Trajectory>& support,
                            const RlConfig& cfg) {
  const std::size_t f = model.feature_dim();
  auto summary = summarize_rollouts(tape, model.context, support);
  auto E = tape.param(model.bank.E);
  auto theta = tape.param(*model.bank.theta);
  if (cfg.adapt.steps == 0) return build_policy(summary, E, theta, f);
  auto z = score_task(summary, theta);
  Tape<float> side;
  Tensor<float> feats = model.body.forward(side, observations(support)).value().detached();
  const Tensor<float> log_std = model.log_std.detached();
  auto adv = compute_advantages(support, cfg.gamma, cfg.horizon);
  HeadLoss<float> loss = [&](Tape<float>& t, Var<float> head) {
    return surrogate_loss(t.constant(feats), diff::reshape(head, {f, kActionDim}), t.constant(log_std), support, adv);
  };
  auto adapted = adapt_scores(diff::reshape(z, {z.size(), 1}).value(), E.value(), cfg.adapt, loss);
  auto zd = z.value().data();
  for (std::size_t i = 0; i < adapted.size(); ++i) adapted[i] -= zd[i];
  z = diff::add(z, tape.constant(Tensor<float>({z.size()}, std::move(adapted.storage()))));
  return diff::reshape(build_head(E, z), {f, kActionDim});
}

inline Tensor<float> task_head_value(RlModel& model, const std::vector<Trajectory>& support, const RlConfig& cfg) {
  RlModel frozen = model;
  frozen.set_trainable(false);
  Tape<float> tape;
  return task_head(tape, frozen, support, cfg).value().detached();
}

struct TaskRollouts {
  NavTask task;
  std::vector<Trajectory> support;
  std::vector<Trajectory> query;
};

/// Support rollouts, then query rollouts under the head built from them.
inline TaskRollouts run_task(const NavTask& task, RlModel& model, const RlConfig& cfg, std::size_t query_count,
                             Rng& rng, std::size_t step = 0) {
  if (!model.log_std.all_finite()) throw DivergenceError("rl: log-std", step);
  TaskRollouts tr{task, collect_support(task, model, cfg, rng), {}};
  Tensor<float> head;
  try {
    head = task_head_value(model, tr.support, cfg);
  } catch (const diff::NonFiniteError&) {
    throw DivergenceError("rl: task head", step);
  }
  if (!head.all_finite()) throw DivergenceError("rl: task head", step);
  auto policy = GaussianPolicy::from(model, std::move(head));
  tr.query = collect_rollouts(task, policy, query_count, rng, cfg.horizon);
  return tr;
}

inline double mean_total_reward(const std::vector<Trajectory>& trajs) {
  double s = 0;
  for (const auto& t : trajs) s += t.total_reward();
  return s / double(trajs.size());
}

inline double mean_final_distance(const std::vector<Trajectory>& trajs) {
  double s = 0;
  for (const auto& t : trajs) s += t.final_distance;
  return s / double(trajs.size());
}

/// Loss of one task: surrogate on its query rollouts, gradients flowing
/// through phi, phi', E, theta and the log-std.
inline Var<float> rl_task_loss(Tape<float>& tape, RlModel& model, const TaskRollouts& tr, const RlConfig& cfg) {
  auto head = task_head(tape, model, tr.support, cfg);
  auto feats = model.body.forward(tape, observations(tr.query));
  auto adv = compute_advantages(tr.query, cfg.gamma, cfg.horizon);
  return surrogate_loss(feats, head, tape.param(model.log_std), tr.query, adv);
}

/// One policy-gradient step on a batch of tasks (loss averaged over tasks,
/// plus beta R(E)). Returns the mean total query reward of the batch.
inline double reinforce_update(RlModel& model, const std::vector<TaskRollouts>& batch, const RlConfig& cfg,
                               diff::Adam& opt, std::size_t step = 0) {
  if (batch.empty()) throw EmptySetError("reinforce_update: empty batch");
  auto params = model.params();
  Tape<float> tape;
  Var<float> total;
  double reward = 0;
  try {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch[i].query.empty()) throw EmptySetError("reinforce_update: task without query rollouts");
      auto l = rl_task_loss(tape, model, batch[i], cfg);
      total = i == 0 ? l : diff::add(total, l);
      reward += mean_total_reward(batch[i].query);
    }
    if (batch.size() > 1) total = diff::scale(total, 1.0f / static_cast<float>(batch.size()));
    if (cfg.beta > 0) total = diff::add(total, diff::scale(ortho_reg(tape.param(model.bank.E)), float(cfg.beta)));
  } catch (const diff::NonFiniteError&) {
    throw DivergenceError("reinforce_update", step);
  }
  if (!std::isfinite(total.value().item())) throw DivergenceError("reinforce_update", step);
  tape.backward(total);
  opt.step(params);
  for (auto& p : params)
    if (!p.tensor->all_finite()) throw DivergenceError("reinforce_update", step);
  return reward / double(batch.size());
}

struct CurvePoint {
  std::size_t iteration = 0;
  Estimate mean_return;  // total query reward per rollout
};

/// Meta-training: each iteration samples `tasks_per_iter` goals, collects
/// support and query rollouts with the current model, and takes one step.
inline std::vector<CurvePoint> rl_meta_train(RlModel& model, const RlConfig& cfg, MetricsLog* metrics = nullptr) {
  cfg.validate();
  std::vector<CurvePoint> curve;
  diff::Adam opt(cfg.lr);
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    Rng rng = stream(cfg.seed, "rl-iteration", it);
    std::vector<TaskRollouts> batch;
    std::vector<double> returns;
    for (std::size_t k = 0; k < cfg.tasks_per_iter; ++k) {
      batch.push_back(run_task(sample_nav_task(rng), model, cfg, cfg.query_rollouts, rng, it));
      for (const auto& t : batch.back().query) returns.push_back(t.total_reward());
    }
    reinforce_update(model, batch, cfg, opt, it);
    curve.push_back({it, train::estimate(returns)});
    if (metrics) metrics->add(it, "train", "mean_return", curve.back().mean_return.mean, curve.back().mean_return.ci95);
    log::debug("rl iteration %zu mean return %.3f", it, curve.back().mean_return.mean);
  }
  return curve;
}

struct RlTaskResult {
  std::size_t task_id = 0;
  Vec2 goal{0, 0};
  double mean_return = 0;
  double final_distance = 0;
};

struct RlEvalResult {
  std::vector<RlTaskResult> tasks;
  Estimate mean_return;
  Estimate final_distance;
};

/// `eval_tasks` unseen goals; per goal, support rollouts condition the head
/// and `eval_query_rollouts` query rollouts are scored. Task i uses its own
/// stream, so the worker count does not change the result.
inline RlEvalResult rl_eval(const RlModel& trained, const RlConfig& cfg, std::uint64_t eval_seed) {
  cfg.validate();
  RlModel model = trained;
  model.set_trainable(false);
  RlEvalResult res;
  res.tasks = train::run_indexed(cfg.eval_tasks, cfg.workers, [&](std::size_t i) {
    Rng rng = stream(eval_seed, "rl-eval", i);
    RlModel local = model;
    auto tr = run_task(sample_nav_task(rng), local, cfg, cfg.eval_query_rollouts, rng);
    return RlTaskResult{i, tr.task.goal, mean_total_reward(tr.query), mean_final_distance(tr.query)};
  });
  std::vector<double> r, d;
  for (const auto& t : res.tasks) {
    r.push_back(t.mean_return);
    d.push_back(t.final_distance);
  }
  res.mean_return = train::estimate(r);
  res.final_distance = train::estimate(d);
  return res;
}

inline void write_reward_curve(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path);
  f << "iteration,mean_return,ci95\n";
  for (const auto& p : curve)
    f << p.iteration << ',' << MetricsLog::format(p.mean_return.mean) << ',' << MetricsLog::format(p.mean_return.ci95)
      << '\n';
}

inline void write_rl_eval(const std::string& path, const RlEvalResult& res) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path);
  f << "task_id,mean_return,final_distance\n";
  for (const auto& t : res.tasks)
    f << t.task_id << ',' << MetricsLog::format(t.mean_return) << ',' << MetricsLog::format(t.final_distance) << '\n';
}

}  // namespace mcl::rl
