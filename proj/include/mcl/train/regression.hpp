#pragma once

#include <cmath>
#include <vector>

#include "mcl/log.hpp"
#include "mcl/tasks/encoders.hpp"
#include "mcl/tasks/sinusoid.hpp"
#include "mcl/train/classify.hpp"

namespace mcl::train {

using tasks::Mlp;
using tasks::Points;

struct RegressConfig {
  std::size_t hidden = 40;           // width of both hidden layers, also the head size d
  std::size_t component_count = 40;  // N
  std::size_t shot = 10;             // support points per training task
  std::size_t query = 10;            // query points per training task
  std::size_t tasks = 20000;         // training tasks in total
  std::size_t meta_batch = 1;        // tasks averaged per update
  double lr = 0.01;
  double beta = 0.5;
  AdaptConfig adapt{0.003, 0};
  std::size_t eval_tasks = 1000;
  std::uint64_t seed = 1;
  std::size_t log_every = 500;
  std::size_t workers = 1;

  void validate() const {
    if (hidden == 0 || component_count == 0) throw ConfigError("regression sizes must be >= 1");
    if (shot == 0 || query == 0) throw ConfigError("regression shot and query must be >= 1");
    if (meta_batch == 0) throw ConfigError("regression meta_batch must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("regression lr must be >= 0");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("regression beta must be >= 0");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (adapt.steps > 0) adapt.validate();
  }
};

/// phi: x -> features [d]; phi': (x, y) -> summary space; bank with theta.
struct RegressionModel {
  Mlp body;
  Mlp context;
  ComponentBank<float> bank;

  static RegressionModel create(const RegressConfig& cfg) {
    cfg.validate();
    Rng rng = stream(cfg.seed, "init-regression");
    RegressionModel m;
    m.body = Mlp({1, cfg.hidden, cfg.hidden}, true, rng, "phi");
    m.context = Mlp({2, cfg.hidden, cfg.hidden}, false, rng, "phi_ctx");
    m.bank = ComponentBank<float>::init(cfg.component_count, cfg.hidden, cfg.hidden, rng);
    return m;
  }

  diff::ParamList<float> params() {
    auto out = body.params();
    for (auto& p : context.params()) out.push_back(p);
    for (auto& p : bank.params()) out.push_back(p);
    return out;
  }

  void set_trainable(bool on) {
    for (auto& p : params()) p.tensor->set_requires_grad(on);
  }
};

namespace detail {

inline Tensor<float> column(const std::vector<float>& v) {
  Tensor<float> t({v.size(), 1});
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

inline Tensor<float> pairs(const Points& pts) {
  Tensor<float> t({pts.size(), 2});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    t.at(i, 0) = pts.x[i];
    t.at(i, 1) = pts.y[i];
  }
  return t;
}

}  // namespace detail

struct RegressResult {
  Var<float> loss;  // query MSE + beta * R(E)
  Var<float> prediction;
  double mse = 0;
};

/// One task: summarize the support pairs with phi', score components via
/// theta, optionally adapt the scores on the support MSE, build the head
/// w = E^T z and predict the query targets as phi(x) . w.
inline RegressResult regress_task_loss(Tape<float>& tape, RegressionModel& model, const Points& support,
                                       const Points& query, double beta, const AdaptConfig& adapt) {
  if (support.size() == 0) throw EmptySetError("regression task has no support points");
  auto summary = diff::mean_rows(model.context.forward(tape, detail::pairs(support)));
  auto E = tape.param(model.bank.E);
  auto theta = tape.param(*model.bank.theta);
  auto z = diff::reshape(score_task(summary, theta), {model.bank.count(), 1});
  if (adapt.steps > 0) {
    auto feats = model.body.forward(tape, detail::column(support.x)).value();
    Tensor<float> targets({support.size()});
    std::copy(support.y.begin(), support.y.end(), targets.data().begin());
    auto adapted = adapt_scores(z.value(), E.value(), adapt, regression_support_loss(std::move(feats), std::move(targets)));
    auto zd = z.value().data();
    for (std::size_t i = 0; i < adapted.size(); ++i) adapted[i] -= zd[i];
    z = diff::add(z, tape.constant(std::move(adapted)));
  }
  auto head = build_head(E, z);
  auto pred = diff::reshape(diff::matmul(model.body.forward(tape, detail::column(query.x)), head), {query.size()});
  Tensor<float> targets({query.size()});
  std::copy(query.y.begin(), query.y.end(), targets.data().begin());
  auto mse = diff::mse(pred, tape.constant(std::move(targets)));
  RegressResult r;
  r.prediction = pred;
  r.mse = mse.value().item();
  r.loss = beta > 0 ? diff::add(mse, diff::scale(ortho_reg(E), static_cast<float>(beta))) : mse;
  return r;
}

struct RegressSummary {
  double initial_ortho = 0;
  double final_ortho = 0;
  double final_mse = 0;  // mean training query MSE over the last logging window
};

/// Meta-trains phi, phi', E and theta jointly with plain SGD, `cfg.meta_batch`
/// tasks per update, until `cfg.tasks` tasks have been used.
inline RegressSummary regress_meta_train(RegressionModel& model, const RegressConfig& cfg,
                                         MetricsLog* metrics = nullptr) {
  cfg.validate();
  auto params = model.params();
  diff::SgdConfig sgd{cfg.lr, {}};
  Rng rng = stream(cfg.seed, "regress-tasks");
  RegressSummary s;
  {
    Tape<float> t;
    s.initial_ortho = s.final_ortho = ortho_reg(t.constant(model.bank.E.detached())).value().item();
  }
  if (metrics) metrics->add(0, "train", "ortho", s.initial_ortho);
  const std::size_t updates = cfg.tasks / cfg.meta_batch;
  const float inv_batch = 1.0f / static_cast<float>(cfg.meta_batch);
  double window = 0;
  std::size_t window_n = 0;
  for (std::size_t step = 1; step <= updates; ++step) {
    Tape<float> tape;
    Var<float> total;
    for (std::size_t b = 0; b < cfg.meta_batch; ++b) {
      auto task = tasks::sample_sinusoid_task(rng);
      auto support = tasks::sample_points(task, cfg.shot, rng);
      auto query = tasks::sample_points(task, cfg.query, rng);
      RegressResult r;
      try {
        r = regress_task_loss(tape, model, support, query, cfg.beta, cfg.adapt);
      } catch (const diff::NonFiniteError&) {
        throw DivergenceError("regress_meta_train", step);
      } catch (const DivergenceError&) {
        throw DivergenceError("regress_meta_train (score adaptation)", step);
      }
      if (!std::isfinite(r.mse)) throw DivergenceError("regress_meta_train", step);
      window += r.mse;
      ++window_n;
      total = b == 0 ? r.loss : diff::add(total, r.loss);
    }
    if (cfg.meta_batch > 1) total = diff::scale(total, inv_batch);
    tape.backward(total);
    diff::sgd_step(params, sgd);
    if (step % cfg.log_every == 0 || step == updates) {
      Tape<float> t;
      s.final_ortho = ortho_reg(t.constant(model.bank.E.detached())).value().item();
      s.final_mse = window / double(window_n);
      if (metrics) {
        metrics->add(step, "train", "mse", s.final_mse);
        metrics->add(step, "train", "ortho", s.final_ortho);
      }
      log::debug("regress step %zu mse %.4f R(E) %.4f", step, s.final_mse, s.final_ortho);
      window = 0;
      window_n = 0;
    }
    if (!model.bank.E.all_finite()) throw DivergenceError("regress_meta_train", step);
  }
  return s;
}

/// Mean MSE over `cfg.eval_tasks` fresh tasks: `shot` of the 1000 grid points
/// (chosen at random) form the support set, the rest are the query set.
/// Task i draws from its own stream so workers do not change the result.
inline Estimate regress_eval(const RegressionModel& trained, const RegressConfig& cfg, std::size_t shot,
                             std::uint64_t eval_seed) {
  cfg.validate();
  RegressionModel model = trained;
  model.set_trainable(false);
  const std::size_t grid_n = tasks::kGridPoints;
  if (shot == 0 || shot >= grid_n) throw ConfigError("regress_eval: shot must be in [1, 999]");
  auto mses = run_indexed(cfg.eval_tasks, cfg.workers, [&](std::size_t i) {
    Rng rng = stream(eval_seed, "regress-eval", i);
    auto task = tasks::sample_sinusoid_task(rng);
    auto grid = tasks::eval_grid(task);
    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t k = 0; k < shot; ++k) std::swap(order[k], order[k + uniform_index(rng, order.size() - k)]);
    std::vector<bool> in_support(grid.size(), false);
    Points support, query;
    for (std::size_t k = 0; k < shot; ++k) in_support[order[k]] = true;
    for (std::size_t j = 0; j < grid.size(); ++j) {
      auto& dst = in_support[j] ? support : query;
      dst.x.push_back(grid.x[j]);
      dst.y.push_back(grid.y[j]);
    }
    RegressionModel local = model;
    Tape<float> tape;
    return regress_task_loss(tape, local, support, query, 0.0, cfg.adapt).mse;
  });
  return estimate(mses);
}

}  // namespace mcl::train
