#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <thread>
#include <type_traits>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mcl/components.hpp"
#include "mcl/error.hpp"

namespace mcl::train {

/// Episodic classification training and evaluation settings.
struct TrainConfig {
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t query = 15;
  std::size_t episodes = 20000;
  double beta = 0.5;
  AdaptConfig adapt{0.1, 0};
  std::size_t component_count = 0;  // 0 means "same as the embedding size"
  SetFunction set_function = SetFunction::Mean;
  double logit_scale = 1.0;
  double meta_lr = 0.002;
  double backbone_scale = 0.1;
  std::size_t eval_episodes = 2000;
  std::uint64_t seed = 1;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 0;  // 0 disables
  std::size_t workers = 1;

  std::size_t components_for(std::size_t embed_dim) const {
    return component_count == 0 ? embed_dim : component_count;
  }

  void validate() const {
    if (way < 2) throw ConfigError("train.way must be >= 2");
    if (shot < 1) throw ConfigError("train.shot must be >= 1");
    if (query < 1) throw ConfigError("train.query must be >= 1");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("train.beta must be >= 0");
    if (!(meta_lr >= 0.0)) throw ConfigError("train.meta_lr must be >= 0");
    if (!(backbone_scale >= 0.0)) throw ConfigError("train.backbone_scale must be >= 0");
    if (!(logit_scale > 0.0)) throw ConfigError("train.logit_scale must be positive");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (adapt.steps > 0) adapt.validate();
  }
};

/// Mean with a normal-approximation 95% interval half-width.
struct Estimate {
  double mean = 0;
  double ci95 = 0;
  std::size_t count = 0;
};

inline Estimate estimate(const std::vector<double>& xs) {
  Estimate e;
  e.count = xs.size();
  if (xs.empty()) return e;
  double s = 0;
  for (double x : xs) s += x;
  e.mean = s / double(xs.size());
  if (xs.size() > 1) {
    double v = 0;
    for (double x : xs) v += (x - e.mean) * (x - e.mean);
    v /= double(xs.size() - 1);
    e.ci95 = 1.96 * std::sqrt(v / double(xs.size()));
  }
  return e;
}

struct MetricsRow {
  std::size_t step = 0;
  std::string split;
  std::string metric;
  double value = 0;
  std::optional<double> ci95;
};

/// Collects metric rows and optionally streams them to a CSV file
/// (`step,split,metric,value,ci95`), flushing after every row.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::string& path) { open(path); }

  void open(const std::string& path) {
    file_.open(path, std::ios::out | std::ios::trunc);
    if (!file_) throw Error("cannot open metrics file " + path);
    file_ << "step,split,metric,value,ci95\n" << std::flush;
  }

  void add(std::size_t step, const std::string& split, const std::string& metric, double value,
           std::optional<double> ci95 = std::nullopt) {
    if (!rows_.empty() && step < rows_.back().step) throw ContractError("metrics rows must be appended by step");
    rows_.push_back({step, split, metric, value, ci95});
    if (file_.is_open()) {
      file_ << step << ',' << split << ',' << metric << ',' << format(value) << ',';
      if (ci95) file_ << format(*ci95);
      file_ << '\n' << std::flush;
    }
  }

  const std::vector<MetricsRow>& rows() const { return rows_; }

  /// Last value recorded for (split, metric).
  std::optional<double> last(const std::string& split, const std::string& metric) const {
    for (auto it = rows_.rbegin(); it != rows_.rend(); ++it)
      if (it->split == split && it->metric == metric) return it->value;
    return std::nullopt;
  }

  static std::string format(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  }

 private:
  std::vector<MetricsRow> rows_;
  std::ofstream file_;
};

/// Index of the largest entry in each row; ties go to the lowest index.
template <class T>
std::vector<std::size_t> argmax_rows(const diff::Tensor<T>& m) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < m.cols(); ++c)
      if (m.at(r, c) > m.at(r, best)) best = c;
    out[r] = best;
  }
  return out;
}

inline double accuracy(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& labels) {
  if (pred.size() != labels.size() || pred.empty()) throw DimensionError("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return double(hit) / double(pred.size());
}

/// Runs fn(0..n-1) on `workers` threads; results come back in index order.
template <class Fn>
auto run_indexed(std::size_t n, std::size_t workers, Fn&& fn) {
  std::vector<std::invoke_result_t<Fn&, std::size_t>> out(n);
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w)
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) out[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace mcl::train
