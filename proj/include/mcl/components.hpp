#pragma once

#include <cmath>
#include <limits>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mcl/diff.hpp"
#include "mcl/rng.hpp"

namespace mcl {

using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;

/// Learned, task-shared components.
///
/// Row n of `E` (N x d) is component e_n and lives in head-parameter space.
/// In regression and RL mode each component also owns a score predictor
/// theta_n (row n of `theta`, N x p) living in task-summary space.
template <class T = float>
struct ComponentBank {
  Tensor<T> E;
  std::optional<Tensor<T>> theta;

  std::size_t count() const { return E.rows(); }
  std::size_t head_dim() const { return E.cols(); }
  bool has_theta() const { return theta.has_value(); }
  std::size_t summary_dim() const { return theta ? theta->cols() : head_dim(); }

  /// Gaussian N(0, 1/cols) rows, redrawn while any row norm is below 1e-3.
  static ComponentBank init(std::size_t n, std::size_t d, std::optional<std::size_t> p, Rng& rng) {
    if (n == 0 || d == 0) throw ContractError("component bank needs N >= 1 and d >= 1");
    ComponentBank bank;
    bank.E = random_rows(n, d, rng);
    if (p) bank.theta = random_rows(n, *p, rng);
    return bank;
  }

  void validate() const {
    check_rows(E, "E");
    if (theta) {
      if (theta->rows() != E.rows()) throw DimensionError("theta must have one row per component");
      check_rows(*theta, "theta");
    }
  }

  diff::ParamList<T> params(const std::string& group = "components") {
    diff::ParamList<T> out{{"bank.E", group, &E}};
    if (theta) out.push_back({"bank.theta", group, &*theta});
    return out;
  }

 private:
  static Tensor<T> random_rows(std::size_t n, std::size_t d, Rng& rng) {
    const double sd = 1.0 / std::sqrt(double(d));
    Tensor<T> m({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      double norm2 = 0;
      do {
        norm2 = 0;
        for (std::size_t j = 0; j < d; ++j) {
          m.at(i, j) = static_cast<T>(normal(rng, 0.0, sd));
          norm2 += double(m.at(i, j)) * m.at(i, j);
        }
      } while (std::sqrt(norm2) < 1e-3);
    }
    m.set_requires_grad(true);
    return m;
  }

  static void check_rows(const Tensor<T>& m, const char* what) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double s = 0;
      for (std::size_t j = 0; j < m.cols(); ++j) s += double(m.at(i, j)) * m.at(i, j);
      if (!(s > 0.0) || !std::isfinite(s))
        throw DegenerateInputError(std::string(what) + " row " + std::to_string(i) + " has zero or non-finite norm");
    }
  }
};

enum class SetFunction { Mean, Max, Min };

inline SetFunction parse_set_function(const std::string& s) {
  if (s == "mean") return SetFunction::Mean;
  if (s == "max") return SetFunction::Max;
  if (s == "min") return SetFunction::Min;
  throw ConfigError("unknown set function '" + s + "'");
}

/// Permutation-invariant reduction of K embeddings [K x d] to one vector [d].
template <class T>
Var<T> summarize(Var<T> embeddings, SetFunction fn = SetFunction::Mean) {
  if (embeddings.shape().size() != 2) throw DimensionError("summarize: expected [K x d] embeddings");
  switch (fn) {
    case SetFunction::Max: return diff::max_rows(embeddings);
    case SetFunction::Min: return diff::min_rows(embeddings);
    case SetFunction::Mean: break;
  }
  return diff::mean_rows(embeddings);
}

/// One summary per class: row c is the set function over rows of
/// `embeddings` whose label is c. Labels must cover 0..ways-1.
template <class T>
Var<T> summarize_classes(Var<T> embeddings, const std::vector<std::size_t>& labels, std::size_t ways,
                         SetFunction fn = SetFunction::Mean) {
  if (labels.size() != embeddings.shape().at(0)) throw DimensionError("summarize_classes: label count mismatch");
  std::vector<Var<T>> rows;
  for (std::size_t c = 0; c < ways; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) idx.push_back(i);
    if (idx.empty()) throw EmptySetError("class " + std::to_string(c) + " has no support items");
    rows.push_back(summarize(diff::gather_rows(embeddings, std::move(idx)), fn));
  }
  return diff::stack(rows);
}

namespace detail {

// cos(p, row_n(M)) for every row of M -> [N].
template <class T>
Var<T> row_cosines(Var<T> p, Var<T> m) {
  if (m.shape().size() != 2 || p.size() != m.shape()[1])
    throw DimensionError("score: summary length " + std::to_string(p.size()) + " does not match " +
                         diff::to_string(m.shape()));
  auto pn = diff::normalize_rows(diff::reshape(p, {1, p.size()}));
  auto s = diff::matmul(diff::normalize_rows(m), diff::transpose(pn));
  return diff::reshape(s, {m.shape()[0]});
}

}  // namespace detail

/// Combination scores of one class summary: entry n = cos(p_c, e_n).
template <class T>
Var<T> score_class(Var<T> summary, Var<T> components) {
  return detail::row_cosines(summary, components);
}

/// Combination scores of a task summary: entry n = cos(p, theta_n).
template <class T>
Var<T> score_task(Var<T> summary, Var<T> predictors) {
  return detail::row_cosines(summary, predictors);
}

/// Score matrix zeta [N x N_c] for class summaries P [N_c x d] against
/// components E [N x d]; entry (n, c) = cos(p_c, e_n).
template <class T>
Var<T> score_matrix(Var<T> summaries, Var<T> components) {
  if (summaries.shape().size() != 2 || components.shape().size() != 2 ||
      summaries.shape()[1] != components.shape()[1])
    throw DimensionError("score_matrix: summaries " + diff::to_string(summaries.shape()) + " vs components " +
                         diff::to_string(components.shape()));
  return diff::matmul(diff::normalize_rows(components), diff::transpose(diff::normalize_rows(summaries)));
}

/// Head W = E^T zeta: column c is sum_n zeta(n, c) e_n. Shape [d x N_c].
template <class T>
Var<T> build_head(Var<T> components, Var<T> zeta) {
  if (zeta.shape().size() == 1) zeta = diff::reshape(zeta, {zeta.size(), 1});
  if (components.shape().size() != 2 || zeta.shape()[0] != components.shape()[0])
    throw DimensionError("build_head: zeta has " + std::to_string(zeta.shape()[0]) + " rows, bank has " +
                         std::to_string(components.shape().at(0)) + " components");
  return diff::matmul(diff::transpose(components), zeta);
}

/// Orthogonality-promoting penalty: sum over i != j of (E E^T)_ij^2.
template <class T>
Var<T> ortho_reg(Var<T> components) {
  auto gram = diff::matmul(components, diff::transpose(components));
  return diff::sum_squares(diff::mask_offdiag(gram));
}

/// Inner-loop settings for score adaptation. steps = 0 means no adaptation.
struct AdaptConfig {
  double alpha = 0.1;
  std::size_t steps = 10;

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("adapt.alpha must be positive");
  }
};

/// Support loss as a function of the generated head.
template <class T>
using HeadLoss = std::function<Var<T>(Tape<T>&, Var<T> head)>;

/// Gradient descent on the score matrix against a support loss, with the
/// components (and whatever produced the loss inputs) held fixed:
///   zeta <- zeta - alpha * d loss(E^T zeta) / d zeta,   `cfg.steps` times.
///
/// A step that would raise the support loss (or make it non-finite) is
/// retried at half the size, up to kMaxHalvings times; if none is accepted
/// the scores stay where they are for the remaining steps.
///
/// If `trace` is given it receives the support loss before every step and
/// after the last one.
template <class T>
Tensor<T> adapt_scores(const Tensor<T>& zeta0, const Tensor<T>& components, const AdaptConfig& cfg,
                       const HeadLoss<T>& support_loss, std::vector<double>* trace = nullptr) {
  constexpr int kMaxHalvings = 30;
  Tensor<T> zeta = zeta0.detached();
  if (cfg.steps == 0 && !trace) return zeta;
  cfg.validate();
  if (zeta.rows() != components.rows())
    throw DimensionError("adapt_scores: zeta rows do not match component count");
  const Tensor<T> frozen = components.detached();

  // Loss at `point`; with `grad` set, also d loss / d point.
  auto evaluate = [&](Tensor<T>& point, std::vector<T>* grad) {
    point.set_requires_grad(grad != nullptr);
    Tape<T> tape;
    auto z = tape.param(point);
    double value = 0;
    Var<T> loss;
    try {
      loss = support_loss(tape, build_head(tape.constant(frozen), z));
      value = loss.value().item();
    } catch (const diff::NonFiniteError&) {
      value = std::numeric_limits<double>::quiet_NaN();
    }
    if (grad && std::isfinite(value)) {
      tape.backward(loss);
      auto g = point.grad();
      grad->assign(g.begin(), g.end());
      point.clear_grad();
    }
    point.set_requires_grad(false);
    return value;
  };

  std::vector<T> grad;
  double current = evaluate(zeta, cfg.steps > 0 ? &grad : nullptr);
  if (!std::isfinite(current)) throw DivergenceError("adapt_scores", 0);
  if (trace) trace->push_back(current);
  bool stuck = false;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (!stuck) {
      stuck = true;
      double a = cfg.alpha;
      std::vector<T> next_grad;
      for (int h = 0; h <= kMaxHalvings && stuck; ++h, a *= 0.5) {
        Tensor<T> trial = zeta.detached();
        auto d = trial.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= static_cast<T>(a * double(grad[i]));
        if (!trial.all_finite()) continue;
        const bool last = step + 1 == cfg.steps;
        const double value = evaluate(trial, last ? nullptr : &next_grad);
        if (std::isfinite(value) && value <= current) {
          zeta = std::move(trial);
          current = value;
          grad = std::move(next_grad);
          stuck = false;
        }
      }
    }
    if (trace) trace->push_back(current);
  }
  zeta.set_requires_grad(false);
  return zeta;
}

/// Support cross-entropy of a classification head over fixed embeddings.
template <class T>
HeadLoss<T> classification_support_loss(Tensor<T> embeddings, std::vector<std::size_t> labels, T logit_scale = T(1)) {
  return [embeddings = std::move(embeddings), labels = std::move(labels), logit_scale](Tape<T>& tape, Var<T> head) {
    auto logits = diff::matmul(tape.constant(embeddings), head);
    if (logit_scale != T(1)) logits = diff::scale(logits, logit_scale);
    return diff::cross_entropy(logits, labels);
  };
}

/// Support MSE of a regression head over fixed features [K x d] and targets [K].
template <class T>
HeadLoss<T> regression_support_loss(Tensor<T> features, Tensor<T> targets) {
  return [features = std::move(features), targets = std::move(targets)](Tape<T>& tape, Var<T> head) {
    auto pred = diff::reshape(diff::matmul(tape.constant(features), head), {targets.size()});
    return diff::mse(pred, tape.constant(targets));
  };
}

}  // namespace mcl
