#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mcl/diff/tensor.hpp"

namespace mcl::diff {

/// A trainable tensor with a stable name and an optimiser group.
template <class T = float>
struct NamedParam {
  std::string name;
  std::string group;
  Tensor<T>* tensor = nullptr;
};

template <class T = float>
using ParamList = std::vector<NamedParam<T>>;

/// Plain SGD. Per-group factors scale the learning rate (e.g. a pre-trained
/// backbone at 0.1x).
struct SgdConfig {
  double learning_rate = 0.002;
  std::map<std::string, double> group_scale;

  double scale_for(const std::string& group) const {
    auto it = group_scale.find(group);
    return it == group_scale.end() ? 1.0 : it->second;
  }

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ContractError("sgd: learning rate must be non-negative");
    for (const auto& [g, s] : group_scale)
      if (!(s >= 0.0)) throw ContractError("sgd: scale for group '" + g + "' must be non-negative");
  }
};

/// p <- p - lr * scale(group) * grad(p), then clears every gradient.
template <class T>
void sgd_step(const ParamList<T>& params, const SgdConfig& cfg) {
  cfg.validate();
  for (const auto& p : params)
    if (!p.tensor->has_grad()) throw ContractError("sgd: parameter '" + p.name + "' has no gradient");
  for (const auto& p : params) {
    const T step = static_cast<T>(cfg.learning_rate * cfg.scale_for(p.group));
    auto d = p.tensor->data();
    auto g = p.tensor->grad();
    if (step != T(0))
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= step * g[i];
    p.tensor->clear_grad();
  }
}

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& p : params) p.tensor->clear_grad();
}

/// Adam with bias correction. Moment buffers are keyed by parameter name,
/// so the parameter list may be rebuilt between steps.
class Adam {
 public:
  explicit Adam(double learning_rate = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {
    if (!(lr_ >= 0.0)) throw ContractError("adam: learning rate must be non-negative");
    if (!(b1_ >= 0.0 && b1_ < 1.0 && b2_ >= 0.0 && b2_ < 1.0)) throw ContractError("adam: betas must be in [0, 1)");
  }

  template <class T>
  void step(const ParamList<T>& params) {
    for (const auto& p : params)
      if (!p.tensor->has_grad()) throw ContractError("adam: parameter '" + p.name + "' has no gradient");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_)), c2 = 1.0 - std::pow(b2_, double(t_));
    for (const auto& p : params) {
      auto& [m, v] = moments_[p.name];
      auto d = p.tensor->data();
      auto g = p.tensor->grad();
      if (m.size() != d.size()) {
        m.assign(d.size(), 0.0);
        v.assign(d.size(), 0.0);
      }
      for (std::size_t i = 0; i < d.size(); ++i) {
        m[i] = b1_ * m[i] + (1 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1 - b2_) * double(g[i]) * g[i];
        d[i] -= static_cast<T>(lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
      }
      p.tensor->clear_grad();
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace mcl::diff
