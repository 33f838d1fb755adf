#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mcl/tasks/shapes.hpp"
#include "mcl/train/classify.hpp"

namespace mcl::train {

/// Pearson correlation of two equal-length vectors. Zero-variance input is degenerate.
inline double pearson(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.size() < 2) throw DimensionError("pearson: need two vectors of equal length >= 2");
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(a.size());
  mb /= double(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0 || sbb <= 0) throw DegenerateInputError("pearson: constant vector");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

struct ProbeConfig {
  std::size_t epochs = 200;
  double lr = 0.01;
};

/// One-vs-rest logistic classifiers for the 11 attributes (5 shapes, then
/// 6 colors) on fixed embeddings [n x d], trained by full-batch gradient
/// descent from zero. Returns the weight vectors as rows [11 x d].
inline Tensor<float> train_attribute_learners(const Tensor<float>& emb, const LabeledPool& pool, const ProbeConfig& cfg) {
  const auto& shapes = pool.shape_ids();
  const auto& colors = pool.color_ids();
  const std::size_t n = emb.rows(), d = emb.cols();
  if (n != pool.size()) throw DimensionError("attribute learners: embedding count does not match pool");
  constexpr std::size_t kAttrs = tasks::kNumShapes + tasks::kNumColors;
  Tensor<float> weights({kAttrs, d});
  for (std::size_t a = 0; a < kAttrs; ++a) {
    std::vector<double> w(d, 0.0), grad(d);
    double bias = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double gb = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool pos = a < tasks::kNumShapes ? shapes[i] == a : colors[i] == a - tasks::kNumShapes;
        double z = bias;
        for (std::size_t j = 0; j < d; ++j) z += w[j] * emb.at(i, j);
        const double err = 1.0 / (1.0 + std::exp(-z)) - (pos ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) grad[j] += err * emb.at(i, j);
        gb += err;
      }
      for (std::size_t j = 0; j < d; ++j) w[j] -= cfg.lr * grad[j] / double(n);
      bias -= cfg.lr * gb / double(n);
    }
    for (std::size_t j = 0; j < d; ++j) weights.at(a, j) = static_cast<float>(w[j]);
  }
  return weights;
}

/// Entry (a, n) = Pearson r between attribute learner a and component e_n.
inline Tensor<float> correlation_matrix(const Tensor<float>& learners, const Tensor<float>& components) {
  if (learners.cols() != components.cols()) throw DimensionError("correlation_matrix: dimension mismatch");
  Tensor<float> r({learners.rows(), components.rows()});
  for (std::size_t a = 0; a < learners.rows(); ++a)
    for (std::size_t n = 0; n < components.rows(); ++n)
      r.at(a, n) = static_cast<float>(pearson(learners.data().subspan(a * learners.cols(), learners.cols()),
                                              components.data().subspan(n * components.cols(), components.cols())));
  return r;
}

/// Attribute-learner vs component correlations [11 x N] on the frozen encoder.
inline Tensor<float> pearson_probe(const LabeledPool& pool, ClassifierModel& model, const ProbeConfig& cfg = {}) {
  if (!pool.has_attributes()) throw ContractError("pearson_probe: pool has no attribute labels");
  const Tensor<float> emb = embed_pool(*model.encoder, pool);
  return correlation_matrix(train_attribute_learners(emb, pool, cfg), model.bank.E);
}

/// Pool indices of the k items whose embeddings have the highest cosine
/// with component `n`; ties keep ascending pool order.
inline std::vector<std::size_t> top_scoring_items(const Tensor<float>& embeddings, const Tensor<float>& components,
                                                  std::size_t n, std::size_t k) {
  if (n >= components.rows()) throw IndexError("top_scoring_items: component index out of range");
  if (k > embeddings.rows()) throw ContractError("top_scoring_items: k exceeds pool size");
  if (embeddings.cols() != components.cols()) throw DimensionError("top_scoring_items: dimension mismatch");
  const std::size_t d = embeddings.cols();
  auto e = components.data().subspan(n * d, d);
  double en = 0;
  for (float v : e) en += double(v) * v;
  en = std::sqrt(en);
  std::vector<double> score(embeddings.rows());
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    double dot = 0, xn = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += double(embeddings.at(i, j)) * e[j];
      xn += double(embeddings.at(i, j)) * embeddings.at(i, j);
    }
    const double denom = std::sqrt(xn) * en;
    score[i] = denom > 0 ? dot / denom : -2.0;  // zero embeddings rank last
  }
  std::vector<std::size_t> order(embeddings.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(k);
  return order;
}

}  // namespace mcl::train
