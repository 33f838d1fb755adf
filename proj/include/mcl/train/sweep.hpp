#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "mcl/train/classify.hpp"

namespace mcl::train {

enum class SweepParam { Beta, ComponentCount };

inline SweepParam parse_sweep_param(const std::string& s) {
  if (s == "beta") return SweepParam::Beta;
  if (s == "components" || s == "component_count") return SweepParam::ComponentCount;
  throw ConfigError("unknown sweep parameter '" + s + "' (expected beta or components)");
}

inline const char* name(SweepParam p) { return p == SweepParam::Beta ? "beta" : "component_count"; }

struct SweepRow {
  double value = 0;
  Estimate accuracy;
  double final_ortho = 0;
};

/// One meta-training run per value, starting from copies of `encoder`
/// with every other setting (seeds included) held fixed.
inline std::vector<SweepRow> ablation_sweep(SweepParam param, const std::vector<double>& values, const TrainConfig& base,
                                            const LabeledPool& train_pool, const LabeledPool& eval_pool,
                                            const Encoder& encoder) {
  if (values.empty()) throw ConfigError("ablation_sweep: no values given");
  std::vector<SweepRow> rows;
  for (double v : values) {
    TrainConfig cfg = base;
    if (param == SweepParam::Beta) {
      cfg.beta = v;
    } else {
      if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError("component count must be a positive integer");
      cfg.component_count = static_cast<std::size_t>(v);
    }
    auto model = ClassifierModel::create(encoder.clone(), cfg);
    auto summary = meta_train(train_pool, model, cfg);
    rows.push_back({v, evaluate_classification(eval_pool, model, cfg), summary.final_ortho});
    log::info("sweep %s=%g accuracy %.4f +- %.4f R(E) %.4f", name(param), v, rows.back().accuracy.mean,
              rows.back().accuracy.ci95, rows.back().final_ortho);
  }
  return rows;
}

inline void write_sweep_csv(const std::string& path, SweepParam param, const std::vector<SweepRow>& rows) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path);
  f << "parameter,value,accuracy,ci95,final_ortho\n";
  for (const auto& r : rows)
    f << name(param) << ',' << MetricsLog::format(r.value) << ',' << MetricsLog::format(r.accuracy.mean) << ','
      << MetricsLog::format(r.accuracy.ci95) << ',' << MetricsLog::format(r.final_ortho) << '\n';
}

}  // namespace mcl::train
