#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mcl/diff/tape.hpp"

namespace mcl::diff {

template <class T>
using ScalarFn = std::function<Var<T>(Tape<T>&)>;

namespace detail {

template <class T>
double evaluate(const ScalarFn<T>& f) {
  Tape<T> tape;
  const double v = f(tape).value().item();
  if (!std::isfinite(v)) throw DegenerateInputError("grad_check: function is not finite at probe point");
  return v;
}

}  // namespace detail

/// Compares reverse-mode gradients of `f` at `points` against central
/// differences with step `h`.
///
/// `f` must bind each point with `tape.param`. Returns
/// max |analytic - numeric| / max(1, |numeric|) over all coordinates.
template <class T>
double grad_check(const ScalarFn<T>& f, const std::vector<Tensor<T>*>& points, double h = 1e-3) {
  for (auto* p : points) {
    p->set_requires_grad(true);
    p->clear_grad();
  }
  {
    Tape<T> tape;
    auto loss = f(tape);
    if (!std::isfinite(double(loss.value().item())))
      throw DegenerateInputError("grad_check: function is not finite at base point");
    tape.backward(loss);
  }
  std::vector<std::vector<T>> analytic;
  for (auto* p : points) {
    auto g = p->grad();
    analytic.emplace_back(g.begin(), g.end());
    p->clear_grad();
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < points.size(); ++k) {
    auto data = points[k]->data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T orig = data[i];
      const T up = static_cast<T>(double(orig) + h);
      const T down = static_cast<T>(double(orig) - h);
      data[i] = up;
      const double fp = detail::evaluate(f);
      data[i] = down;
      const double fm = detail::evaluate(f);
      data[i] = orig;
      const double numeric = (fp - fm) / (double(up) - double(down));
      const double err = std::abs(double(analytic[k][i]) - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace mcl::diff
