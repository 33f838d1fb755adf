#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mcl/log.hpp"
#include "mcl/train/classify.hpp"

namespace mcl::train {

struct PretrainConfig {
  std::size_t epochs = 50;
  std::size_t batch = 16;
  double lr = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch == 0) throw ConfigError("pretrain.batch must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("pretrain.lr must be >= 0");
  }
};

/// Linear classifier over all seen classes; discarded after pre-training.
struct PretrainHead {
  Tensor<float> W;  // [d x classes]
  std::vector<std::uint16_t> classes;  // column c predicts classes[c]
};

struct PretrainResult {
  PretrainHead head;
  double final_loss = 0;      // mean over the last epoch
  double train_accuracy = 0;  // whole pool, frozen encoder, after training
};

/// Supervised pre-training of `encoder` with a linear head over every class
/// in `pool` (cross-entropy, plain SGD, shuffled mini-batches).
inline PretrainResult pretrain_backbone(const LabeledPool& pool, Encoder& encoder, const PretrainConfig& cfg,
                                        MetricsLog* metrics = nullptr) {
  cfg.validate();
  if (pool.num_classes() < 2) throw CapacityError("pretrain_backbone: pool needs at least 2 classes");
  PretrainResult res;
  std::map<std::uint16_t, std::size_t> column;
  for (const auto& [label, items] : pool.by_class()) {
    column[label] = res.head.classes.size();
    res.head.classes.push_back(label);
  }
  const std::size_t d = encoder.output_dim(), k = res.head.classes.size();
  Rng init = stream(cfg.seed, "pretrain-head");
  res.head.W = Tensor<float>({d, k});
  for (auto& v : res.head.W.data()) v = static_cast<float>(normal(init, 0.0, 1.0 / std::sqrt(double(d))));
  res.head.W.set_requires_grad(true);

  auto params = encoder.params();
  params.push_back({"pretrain.head", "head", &res.head.W});
  diff::SgdConfig sgd{cfg.lr, {}};
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = stream(cfg.seed, "pretrain-shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + std::min(order.size(), start + cfg.batch));
      std::vector<std::size_t> labels;
      for (std::size_t i : idx) labels.push_back(column.at(pool.label(i)));
      Tape<float> tape;
      auto logits = diff::matmul(encoder.forward(tape, pool.batch(idx)), tape.param(res.head.W));
      Var<float> loss;
      try {
        loss = diff::cross_entropy(logits, labels);
      } catch (const diff::NonFiniteError&) {
        throw DivergenceError("pretrain_backbone", epoch);
      }
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) throw DivergenceError("pretrain_backbone", epoch);
      tape.backward(loss);
      diff::sgd_step(params, sgd);
      loss_sum += lv;
      ++batches;
    }
    res.final_loss = loss_sum / double(batches);
    if (metrics) metrics->add(epoch + 1, "pretrain", "loss", res.final_loss);
    log::debug("pretrain epoch %zu loss %.4f", epoch + 1, res.final_loss);
  }

  const Tensor<float> emb = embed_pool(encoder, pool);
  Tape<float> tape;
  auto pred = argmax_rows(diff::matmul(tape.constant(emb), tape.constant(res.head.W.detached())).value());
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < pool.size(); ++i) labels.push_back(column.at(pool.label(i)));
  res.train_accuracy = accuracy(pred, labels);
  if (metrics) metrics->add(cfg.epochs, "pretrain", "accuracy", res.train_accuracy);
  return res;
}

}  // namespace mcl::train
