#pragma once

#include <functional>
#include <memory>
#include <span>
#include <thread>
#include <vector>

#include "mcl/components.hpp"
#include "mcl/log.hpp"
#include "mcl/tasks/encoders.hpp"
#include "mcl/tasks/episode.hpp"
#include "mcl/train/common.hpp"

namespace mcl::train {

using diff::Tape;
using diff::Tensor;
using diff::Var;
using tasks::Encoder;
using tasks::Episode;
using tasks::LabeledPool;

/// Encoder plus component bank for episodic classification.
struct ClassifierModel {
  std::unique_ptr<Encoder> encoder;
  ComponentBank<float> bank;

  ClassifierModel() = default;
  ClassifierModel(std::unique_ptr<Encoder> enc, ComponentBank<float> b) : encoder(std::move(enc)), bank(std::move(b)) {}
  ClassifierModel(const ClassifierModel& o) : encoder(o.encoder ? o.encoder->clone() : nullptr), bank(o.bank) {}
  ClassifierModel(ClassifierModel&&) = default;
  ClassifierModel& operator=(const ClassifierModel& o) {
    if (this != &o) {
      encoder = o.encoder ? o.encoder->clone() : nullptr;
      bank = o.bank;
    }
    return *this;
  }
  ClassifierModel& operator=(ClassifierModel&&) = default;

  /// Fresh bank of `cfg.components_for(d)` components on top of `enc`.
  static ClassifierModel create(std::unique_ptr<Encoder> enc, const TrainConfig& cfg) {
    Rng rng = stream(cfg.seed, "init-components");
    const std::size_t d = enc->output_dim();
    auto bank = ComponentBank<float>::init(cfg.components_for(d), d, std::nullopt, rng);
    return ClassifierModel(std::move(enc), std::move(bank));
  }

  std::size_t embed_dim() const { return encoder->output_dim(); }

  /// Encoder tensors go in group "backbone", the bank in "components".
  diff::ParamList<float> params(bool with_encoder = true) {
    diff::ParamList<float> out;
    if (with_encoder)
      for (auto p : encoder->params()) {
        p.group = "backbone";
        out.push_back(p);
      }
    for (auto& p : bank.params()) out.push_back(p);
    return out;
  }
};

/// Forward pass over the whole pool with frozen parameters, `batch` items at a time.
inline Tensor<float> embed_pool(Encoder& encoder, const LabeledPool& pool, std::size_t batch = 128) {
  if (pool.empty()) throw CapacityError("embed_pool: empty pool");
  const std::size_t d = encoder.output_dim();
  Tensor<float> out({pool.size(), d});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < pool.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(pool.size(), start + batch); ++i) idx.push_back(i);
    Tape<float> tape;
    auto e = encoder.forward(tape, pool.batch(idx)).value();
    std::copy(e.data().begin(), e.data().end(), out.data().begin() + start * d);
  }
  return out;
}

/// Embeddings of the listed items on `tape`, either from the encoder or,
/// when `cache` is given, as constants gathered from precomputed rows.
inline Var<float> embed_items(Tape<float>& tape, Encoder& encoder, const LabeledPool& pool,
                              std::span<const std::size_t> idx, const Tensor<float>* cache) {
  if (!cache) return encoder.forward(tape, pool.batch(idx));
  const std::size_t d = cache->cols();
  Tensor<float> out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(cache->data().begin() + idx[r] * d, d, out.data().begin() + r * d);
  return tape.constant(std::move(out));
}

struct HeadResult {
  Var<float> loss;    // query cross-entropy + beta * R(E)
  Var<float> logits;  // [queries x ways]
  double cross_entropy = 0;
  double ortho = 0;
  double accuracy = 0;
};

/// Builds the episode head from support embeddings and scores the query set.
///
/// p_c = set function of class c's support embeddings, zeta = cos(p_c, e_n),
/// optionally adapted for `cfg.adapt.steps` steps on the support loss, then
/// W = E^T zeta and logits = query @ W. The adapted scores enter as
/// zeta0 + const(zeta_M - zeta0), so the loss still reaches the encoder and
/// E through zeta0; with no adaptation steps the graph is exactly MCL's.
inline HeadResult mcl_head_loss(Tape<float>& tape, Var<float> support, const std::vector<std::size_t>& support_labels,
                                Var<float> query, const std::vector<std::size_t>& query_labels, Var<float> components,
                                std::size_t ways, const TrainConfig& cfg) {
  auto protos = summarize_classes(support, support_labels, ways, cfg.set_function);
  auto zeta = score_matrix(protos, components);
  const float logit_scale = static_cast<float>(cfg.logit_scale);
  if (cfg.adapt.steps > 0) {
    auto adapted = adapt_scores(zeta.value(), components.value(), cfg.adapt,
                                classification_support_loss(support.value(), support_labels, logit_scale));
    auto delta = adapted;
    auto zd = zeta.value().data();
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= zd[i];
    zeta = diff::add(zeta, tape.constant(std::move(delta)));
  }
  auto head = build_head(components, zeta);
  auto logits = diff::matmul(query, head);
  if (logit_scale != 1.0f) logits = diff::scale(logits, logit_scale);
  auto ce = diff::cross_entropy(logits, query_labels);
  auto reg = ortho_reg(components);
  HeadResult r;
  r.loss = cfg.beta > 0 ? diff::add(ce, diff::scale(reg, static_cast<float>(cfg.beta))) : ce;
  r.logits = logits;
  r.cross_entropy = ce.value().item();
  r.ortho = reg.value().item();
  r.accuracy = accuracy(argmax_rows(logits.value()), query_labels);
  return r;
}

/// Embeds an episode's support and query items and evaluates the MCL/AMCL loss.
inline HeadResult mcl_episode_loss(Tape<float>& tape, const Episode& ep, const LabeledPool& pool,
                                   ClassifierModel& model, const TrainConfig& cfg,
                                   const Tensor<float>* cache = nullptr) {
  std::vector<std::size_t> items = ep.support;
  items.insert(items.end(), ep.query.begin(), ep.query.end());
  auto all = embed_items(tape, *model.encoder, pool, items, cache);
  std::vector<std::size_t> s_rows(ep.support.size()), q_rows(ep.query.size());
  std::iota(s_rows.begin(), s_rows.end(), 0);
  std::iota(q_rows.begin(), q_rows.end(), ep.support.size());
  auto support = diff::gather_rows(all, std::move(s_rows));
  auto query = diff::gather_rows(all, std::move(q_rows));
  return mcl_head_loss(tape, support, ep.support_labels, query, ep.query_labels, tape.param(model.bank.E), ep.ways,
                       cfg);
}

/// Negative squared distance to each class prototype: [queries x ways].
inline Var<float> protonet_logits(Var<float> support, const std::vector<std::size_t>& support_labels, Var<float> query,
                                  std::size_t ways) {
  auto protos = summarize_classes(support, support_labels, ways, SetFunction::Mean);
  return diff::scale(diff::sq_distances(query, protos), -1.0f);
}

/// Nearest-prototype query accuracy of one episode.
inline double protonet_episode(const Episode& ep, const LabeledPool& pool, Encoder& encoder,
                               const Tensor<float>* cache = nullptr) {
  Tape<float> tape;
  auto s = embed_items(tape, encoder, pool, ep.support, cache);
  auto q = embed_items(tape, encoder, pool, ep.query, cache);
  return accuracy(argmax_rows(protonet_logits(s, ep.support_labels, q, ep.ways).value()), ep.query_labels);
}

/// Mean query accuracy of MCL (AMCL when cfg.adapt.steps > 0) over
/// `cfg.eval_episodes` episodes. Episode i draws from its own stream, so the
/// result does not depend on `cfg.workers`.
inline Estimate evaluate_classification(const LabeledPool& pool, ClassifierModel& model, const TrainConfig& cfg) {
  cfg.validate();
  const Tensor<float> cache = embed_pool(*model.encoder, pool);
  const Tensor<float> components = model.bank.E.detached();
  auto accs = run_indexed(cfg.eval_episodes, cfg.workers, [&](std::size_t i) {
    Rng rng = stream(cfg.seed, "eval-episode", i);
    auto ep = tasks::sample_episode(pool, cfg.way, cfg.shot, cfg.query, rng);
    Tape<float> tape;
    auto s = embed_items(tape, *model.encoder, pool, ep.support, &cache);
    auto q = embed_items(tape, *model.encoder, pool, ep.query, &cache);
    return mcl_head_loss(tape, s, ep.support_labels, q, ep.query_labels, tape.constant(components), ep.ways, cfg)
        .accuracy;
  });
  return estimate(accs);
}

/// Nearest-prototype accuracy on the same episodes evaluate_classification uses.
inline Estimate evaluate_protonet(const LabeledPool& pool, Encoder& encoder, const TrainConfig& cfg) {
  cfg.validate();
  const Tensor<float> cache = embed_pool(encoder, pool);
  auto accs = run_indexed(cfg.eval_episodes, cfg.workers, [&](std::size_t i) {
    Rng rng = stream(cfg.seed, "eval-episode", i);
    return protonet_episode(tasks::sample_episode(pool, cfg.way, cfg.shot, cfg.query, rng), pool, encoder, &cache);
  });
  return estimate(accs);
}

struct TrainSummary {
  std::size_t episodes = 0;
  double initial_ortho = 0;
  double final_ortho = 0;
  double final_loss = 0;      // mean over the last logging window
  double final_accuracy = 0;  // mean query accuracy over the last logging window
  std::vector<double> ortho_trace;  // R(E) at step 0 and at every logging step
};

using CheckpointFn = std::function<void(std::size_t step, ClassifierModel& model)>;

namespace detail {

inline bool encoder_frozen(Encoder& enc, const TrainConfig& cfg) {
  if (cfg.backbone_scale == 0.0) return true;
  for (auto& p : enc.params())
    if (p.tensor->requires_grad()) return false;
  return true;
}

}  // namespace detail

/// Episodic meta-training (MCL, or AMCL when cfg.adapt.steps > 0) with plain
/// SGD. The encoder learns at meta_lr * backbone_scale; with a zero scale it
/// is frozen and its pool embeddings are computed once.
inline TrainSummary meta_train(const LabeledPool& pool, ClassifierModel& model, const TrainConfig& cfg,
                               MetricsLog* metrics = nullptr, const CheckpointFn& on_checkpoint = {}) {
  cfg.validate();
  const bool frozen = detail::encoder_frozen(*model.encoder, cfg);
  std::optional<Tensor<float>> cache;
  if (frozen && cfg.episodes > 0) {
    model.encoder->set_trainable(false);
    cache = embed_pool(*model.encoder, pool);
  }
  auto params = model.params(!frozen);
  diff::SgdConfig sgd{cfg.meta_lr, {{"backbone", cfg.backbone_scale}}};
  Rng rng = stream(cfg.seed, "episodes");

  TrainSummary summary;
  {
    Tape<float> tape;
    summary.initial_ortho = ortho_reg(tape.constant(model.bank.E.detached())).value().item();
  }
  summary.final_ortho = summary.initial_ortho;
  summary.ortho_trace.push_back(summary.initial_ortho);
  if (metrics) metrics->add(0, "train", "ortho", summary.initial_ortho);

  double win_loss = 0, win_acc = 0;
  std::size_t win = 0;
  for (std::size_t step = 1; step <= cfg.episodes; ++step) {
    auto ep = tasks::sample_episode(pool, cfg.way, cfg.shot, cfg.query, rng);
    Tape<float> tape;
    HeadResult r;
    try {
      r = mcl_episode_loss(tape, ep, pool, model, cfg, cache ? &*cache : nullptr);
    } catch (const diff::NonFiniteError&) {
      throw DivergenceError("meta_train", step);
    } catch (const DivergenceError&) {
      throw DivergenceError("meta_train (score adaptation)", step);
    }
    const double loss = r.loss.value().item();
    if (!std::isfinite(loss)) throw DivergenceError("meta_train", step);
    tape.backward(r.loss);
    diff::sgd_step(params, sgd);
    win_loss += loss;
    win_acc += r.accuracy;
    ++win;
    if (step % cfg.log_every == 0 || step == cfg.episodes) {
      Tape<float> t2;
      summary.final_ortho = ortho_reg(t2.constant(model.bank.E.detached())).value().item();
      summary.ortho_trace.push_back(summary.final_ortho);
      summary.final_loss = win_loss / double(win);
      summary.final_accuracy = win_acc / double(win);
      if (metrics) {
        metrics->add(step, "train", "loss", summary.final_loss);
        metrics->add(step, "train", "accuracy", summary.final_accuracy);
        metrics->add(step, "train", "ortho", summary.final_ortho);
      }
      log::debug("episode %zu loss %.4f acc %.3f R(E) %.4f", step, summary.final_loss, summary.final_accuracy,
                 summary.final_ortho);
      win_loss = win_acc = 0;
      win = 0;
    }
    if (!model.bank.E.all_finite()) throw DivergenceError("meta_train", step);
    if (on_checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) on_checkpoint(step, model);
  }
  if (frozen) model.encoder->set_trainable(cfg.backbone_scale > 0.0);
  summary.episodes = cfg.episodes;
  return summary;
}

/// Episodic training of the nearest-prototype baseline under the same
/// schedule as meta_train (encoder at meta_lr * backbone_scale). A zero
/// scale leaves the encoder untouched.
inline void protonet_meta_train(const LabeledPool& pool, Encoder& encoder, const TrainConfig& cfg) {
  cfg.validate();
  if (detail::encoder_frozen(encoder, cfg) || cfg.episodes == 0) return;
  auto params = encoder.params();
  for (auto& p : params) p.group = "backbone";
  diff::SgdConfig sgd{cfg.meta_lr, {{"backbone", cfg.backbone_scale}}};
  Rng rng = stream(cfg.seed, "episodes");
  for (std::size_t step = 1; step <= cfg.episodes; ++step) {
    auto ep = tasks::sample_episode(pool, cfg.way, cfg.shot, cfg.query, rng);
    Tape<float> tape;
    auto s = embed_items(tape, encoder, pool, ep.support, nullptr);
    auto q = embed_items(tape, encoder, pool, ep.query, nullptr);
    auto loss = diff::cross_entropy(protonet_logits(s, ep.support_labels, q, ep.ways), ep.query_labels);
    if (!std::isfinite(loss.value().item())) throw DivergenceError("protonet_meta_train", step);
    tape.backward(loss);
    diff::sgd_step(params, sgd);
  }
}

}  // namespace mcl::train
