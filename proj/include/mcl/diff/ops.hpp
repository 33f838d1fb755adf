#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mcl/diff/tape.hpp"
#include "mcl/diff/tensor.hpp"

namespace mcl::diff {

/// Raised when an op would produce NaN or Inf.
class NonFiniteError : public DegenerateInputError {
 public:
  using DegenerateInputError::DegenerateInputError;
};

namespace detail {

template <class T>
void require_rank(const Var<T>& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(v.shape()));
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

template <class T>
void require_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NonFiniteError(std::string(op) + ": non-finite result");
}

// C[m x n] (+)= A[m x k] * B[k x n], row-major.
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] (+)= A^T * B with A[k x m], B[k x n].
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void transpose_into(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

// C[m x n] (+)= A[m x k] * B^T with B[n x k].
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  std::vector<T> bt(n * k);
  transpose_into(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions disagree " + to_string(a.shape()) + " @ " +
                         to_string(b.shape()));
  Tensor<T> out({m, n});
  detail::gemm_nn(m, n, k, a.value().data().data(), b.value().data().data(), out.data().data(), false);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, n, k](Tape<T>& tape, std::span<const T> g) {
    if (auto ga = tape.grad(a.id()); !ga.empty())
      detail::gemm_nt(m, k, n, g.data(), b.value().data().data(), ga.data(), true);
    if (auto gb = tape.grad(b.id()); !gb.empty())
      detail::gemm_tn(k, n, m, a.value().data().data(), g.data(), gb.data(), true);
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out({c, r});
  detail::transpose_into(r, c, a.value().data().data(), out.data().data());
  return a.tape().record(std::move(out), {a}, [a, r, c](Tape<T>& tape, std::span<const T> g) {
    auto ga = tape.grad(a.id());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (numel(shape) != a.size())
    throw DimensionError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  Tensor<T> out(std::move(shape), a.value().storage());
  return a.tape().record(std::move(out), {a}, [a](Tape<T>& tape, std::span<const T> g) {
    auto ga = tape.grad(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto x = a.value().data(), y = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& tape, std::span<const T> g) {
    for (auto id : {a.id(), b.id()}) {
      auto gi = tape.grad(id);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  auto x = a.value().data(), y = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& tape, std::span<const T> g) {
    if (auto ga = tape.grad(a.id()); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    if (auto gb = tape.grad(b.id()); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

/// Hadamard product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto x = a.value().data(), y = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& tape, std::span<const T> g) {
    auto x = a.value().data(), y = b.value().data();
    if (auto ga = tape.grad(a.id()); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i];
    if (auto gb = tape.grad(b.id()); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * x[i];
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out(a.shape());
  auto x = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape<T>& tape, std::span<const T> g) {
    auto ga = tape.grad(a.id());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
  });
}

/// x[m x n] + bias[n] broadcast over rows.
template <class T>
Var<T> add_row_bias(Var<T> x, Var<T> bias) {
  detail::require_rank(x, 2, "add_row_bias");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (bias.size() != n) throw DimensionError("add_row_bias: bias length mismatch");
  Tensor<T> out(x.shape());
  auto xv = x.value().data(), bv = bias.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  return x.tape().record(std::move(out), {x, bias}, [x, bias, m, n](Tape<T>& tape, std::span<const T> g) {
    if (auto gx = tape.grad(x.id()); !gx.empty())
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    if (auto gb = tape.grad(bias.id()); !gb.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
  });
}

/// max(0, x); the derivative at exactly 0 is 0.
template <class T>
Var<T> relu(Var<T> a) {
  Tensor<T> out(a.shape());
  auto x = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return a.tape().record(std::move(out), {a}, [a](Tape<T>& tape, std::span<const T> g) {
    auto ga = tape.grad(a.id());
    auto x = a.value().data();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (x[i] > T(0)) ga[i] += g[i];
  });
}

/// Elementwise clamp; zero gradient where the bound is active.
template <class T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  Tensor<T> out(a.shape());
  auto x = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
  return a.tape().record(std::move(out), {a}, [a, lo, hi](Tape<T>& tape, std::span<const T> g) {
    auto ga = tape.grad(a.id());
    auto x = a.value().data();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
  });
}

/// Zeroes the diagonal of a square matrix.
template <class T>
Var<T> mask_offdiag(Var<T> a) {
  detail::require_rank(a, 2, "mask_offdiag");
  const std::size_t n = a.shape()[0];
  if (a.shape()[1] != n) throw DimensionError("mask_offdiag: matrix must be square");
  Tensor<T> out = a.value().detached();
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] = T(0);
  return a.tape().record(std::move(out), {a}, [a, n](Tape<T>& tape, std::span<const T> g) {
    auto ga = tape.grad(a.id());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) ga[i * n + j] += g[i * n + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulation)

template <class T>
Var<T> sum(Var<T> a) {
  double s = 0.0;
  for (T v : a.value().data()) s += v;
  return a.tape().record(Tensor<T>::scalar(static_cast<T>(s)), {a}, [a](Tape<T>& tape, std::span<const T> g) {
    auto ga = tape.grad(a.id());
    for (auto& v : ga) v += g[0];
  });
}

template <class T>
Var<T> sum_squares(Var<T> a) {
  double s = 0.0;
  for (T v : a.value().data()) s += double(v) * double(v);
  return a.tape().record(Tensor<T>::scalar(static_cast<T>(s)), {a}, [a](Tape<T>& tape, std::span<const T> g) {
    auto ga = tape.grad(a.id());
    auto x = a.value().data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += T(2) * x[i] * g[0];
  });
}

/// Row mean of x[m x d] -> [d].
template <class T>
Var<T> mean_rows(Var<T> x) {
  detail::require_rank(x, 2, "mean_rows");
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  std::vector<double> acc(d, 0.0);
  auto xv = x.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) acc[j] += xv[i * d + j];
  Tensor<T> out({d});
  for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<T>(acc[j] / double(m));
  return x.tape().record(std::move(out), {x}, [x, m, d](Tape<T>& tape, std::span<const T> g) {
    auto gx = tape.grad(x.id());
    const T inv = T(1) / T(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] * inv;
  });
}

namespace detail {

template <class T, class Better>
Var<T> extreme_rows(Var<T> x, Better better, const char* op) {
  require_rank(x, 2, op);
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  auto xv = x.value().data();
  std::vector<std::size_t> arg(d, 0);
  Tensor<T> out({d});
  for (std::size_t j = 0; j < d; ++j) {
    T best = xv[j];
    for (std::size_t i = 1; i < m; ++i)
      if (better(xv[i * d + j], best)) {
        best = xv[i * d + j];
        arg[j] = i;
      }
    out[j] = best;
  }
  return x.tape().record(std::move(out), {x}, [x, d, arg = std::move(arg)](Tape<T>& tape, std::span<const T> g) {
    auto gx = tape.grad(x.id());
    for (std::size_t j = 0; j < d; ++j) gx[arg[j] * d + j] += g[j];
  });
}

}  // namespace detail

/// Column-wise maximum over rows; ties go to the first row.
template <class T>
Var<T> max_rows(Var<T> x) {
  return detail::extreme_rows(x, [](T a, T b) { return a > b; }, "max_rows");
}

template <class T>
Var<T> min_rows(Var<T> x) {
  return detail::extreme_rows(x, [](T a, T b) { return a < b; }, "min_rows");
}

/// Picks rows `index` of x[m x d] -> [k x d].
template <class T>
Var<T> gather_rows(Var<T> x, std::vector<std::size_t> index) {
  detail::require_rank(x, 2, "gather_rows");
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  if (index.empty()) throw EmptySetError("gather_rows: no rows requested");
  Tensor<T> out({index.size(), d});
  auto xv = x.value().data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= m) throw IndexError("gather_rows: row " + std::to_string(index[r]) + " out of range");
    std::copy_n(xv.begin() + index[r] * d, d, out.data().begin() + r * d);
  }
  return x.tape().record(std::move(out), {x}, [x, d, index = std::move(index)](Tape<T>& tape, std::span<const T> g) {
    auto gx = tape.grad(x.id());
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) gx[index[r] * d + j] += g[r * d + j];
  });
}

/// Stacks equal-length vectors into the rows of a matrix.
template <class T>
Var<T> stack(const std::vector<Var<T>>& rows) {
  if (rows.empty()) throw EmptySetError("stack: no rows");
  const std::size_t d = rows.front().size();
  Tensor<T> out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != d) throw DimensionError("stack: rows differ in length");
    auto v = rows[r].value().data();
    std::copy(v.begin(), v.end(), out.data().begin() + r * d);
  }
  return rows.front().tape().record(std::move(out), rows, [rows, d](Tape<T>& tape, std::span<const T> g) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto gr = tape.grad(rows[r].id());
      for (std::size_t j = 0; j < gr.size(); ++j) gr[j] += g[r * d + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Similarity

/// (u . v) / (|u| |v|). Zero-norm operands raise DegenerateInputError.
template <class T>
Var<T> cosine(Var<T> u, Var<T> v) {
  if (u.size() != v.size()) throw DimensionError("cosine: length mismatch");
  auto x = u.value().data(), y = v.value().data();
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += double(x[i]) * y[i];
    nu += double(x[i]) * x[i];
    nv += double(y[i]) * y[i];
  }
  if (nu <= 0.0 || nv <= 0.0) throw DegenerateInputError("cosine: zero-norm argument");
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  const double c = std::clamp(dot / (nu * nv), -1.0, 1.0);
  return u.tape().record(Tensor<T>::scalar(static_cast<T>(c)), {u, v},
                         [u, v, nu, nv, c](Tape<T>& tape, std::span<const T> g) {
                           auto x = u.value().data(), y = v.value().data();
                           // d/du = v/(|u||v|) - c u/|u|^2
                           if (auto gu = tape.grad(u.id()); !gu.empty())
                             for (std::size_t i = 0; i < gu.size(); ++i)
                               gu[i] += static_cast<T>(g[0] * (y[i] / (nu * nv) - c * x[i] / (nu * nu)));
                           if (auto gv = tape.grad(v.id()); !gv.empty())
                             for (std::size_t i = 0; i < gv.size(); ++i)
                               gv[i] += static_cast<T>(g[0] * (x[i] / (nu * nv) - c * y[i] / (nv * nv)));
                         });
}

/// Scales each row of x[m x d] to unit Euclidean norm.
template <class T>
Var<T> normalize_rows(Var<T> x) {
  detail::require_rank(x, 2, "normalize_rows");
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  auto xv = x.value().data();
  std::vector<double> norms(m);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += double(xv[i * d + j]) * xv[i * d + j];
    if (s <= 0.0) throw DegenerateInputError("normalize_rows: row " + std::to_string(i) + " has zero norm");
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = static_cast<T>(xv[i * d + j] / norms[i]);
  }
  Tensor<T> unit = out.detached();
  return x.tape().record(std::move(out), {x},
                         [x, m, d, norms = std::move(norms), unit = std::move(unit)](Tape<T>& tape, std::span<const T> g) {
                           auto gx = tape.grad(x.id());
                           // (g - (g.u) u) / |x|
                           for (std::size_t i = 0; i < m; ++i) {
                             double dot = 0;
                             for (std::size_t j = 0; j < d; ++j) dot += double(g[i * d + j]) * unit[i * d + j];
                             for (std::size_t j = 0; j < d; ++j)
                               gx[i * d + j] += static_cast<T>((g[i * d + j] - dot * unit[i * d + j]) / norms[i]);
                           }
                         });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean over rows of -log softmax(logits)[label], stabilised by max subtraction.
/// Squared Euclidean distance between every row of `a` [m x d] and every
/// row of `b` [n x d]; result [m x n].
template <class T>
Var<T> sq_distances(Var<T> a, Var<T> b) {
  detail::require_rank(a, 2, "sq_distances");
  detail::require_rank(b, 2, "sq_distances");
  const std::size_t m = a.shape()[0], n = b.shape()[0], d = a.shape()[1];
  if (b.shape()[1] != d) throw DimensionError("sq_distances: row sizes differ");
  Tensor<T> out({m, n});
  auto av = a.value().data(), bv = b.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = double(av[i * d + k]) - double(bv[j * d + k]);
        s += diff * diff;
      }
      out[i * n + j] = static_cast<T>(s);
    }
  return a.tape().record(std::move(out), {a, b}, [a, b, m, n, d](Tape<T>& tape, std::span<const T> g) {
    auto av = a.value().data(), bv = b.value().data();
    auto ga = tape.grad(a.id());
    auto gb = tape.grad(b.id());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const T w = T(2) * g[i * n + j];
        for (std::size_t k = 0; k < d; ++k) {
          const T diff = av[i * d + k] - bv[j * d + k];
          if (!ga.empty()) ga[i * d + k] += w * diff;
          if (!gb.empty()) gb[j * d + k] -= w * diff;
        }
      }
  });
}

template <class T>
Var<T> cross_entropy(Var<T> logits, const std::vector<std::size_t>& labels) {
  detail::require_rank(logits, 2, "cross_entropy");
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != b) throw DimensionError("cross_entropy: label count mismatch");
  auto z = logits.value().data();
  std::vector<T> prob(b * c);
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c) throw IndexError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    double mx = z[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, double(z[i * c + j]));
    double se = 0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(double(z[i * c + j]) - mx);
    const double lse = mx + std::log(se);
    total += lse - double(z[i * c + labels[i]]);
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] = static_cast<T>(std::exp(double(z[i * c + j]) - lse));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / double(b)));
  detail::require_finite(out, "cross_entropy");
  return logits.tape().record(std::move(out), {logits},
                              [logits, labels, b, c, prob = std::move(prob)](Tape<T>& tape, std::span<const T> g) {
                                auto gz = tape.grad(logits.id());
                                const T s = g[0] / T(b);
                                for (std::size_t i = 0; i < b; ++i)
                                  for (std::size_t j = 0; j < c; ++j)
                                    gz[i * c + j] += s * (prob[i * c + j] - (j == labels[i] ? T(1) : T(0)));
                              });
}

/// Mean squared difference.
template <class T>
Var<T> mse(Var<T> pred, Var<T> target) {
  if (pred.shape() != target.shape()) throw DimensionError("mse: shape mismatch");
  auto p = pred.value().data(), t = target.value().data();
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = double(p[i]) - t[i];
    s += e * e;
  }
  const std::size_t n = p.size();
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / double(n)));
  detail::require_finite(out, "mse");
  return pred.tape().record(std::move(out), {pred, target}, [pred, target, n](Tape<T>& tape, std::span<const T> g) {
    auto p = pred.value().data(), t = target.value().data();
    const T s = T(2) * g[0] / T(n);
    if (auto gp = tape.grad(pred.id()); !gp.empty())
      for (std::size_t i = 0; i < n; ++i) gp[i] += s * (p[i] - t[i]);
    if (auto gt = tape.grad(target.id()); !gt.empty())
      for (std::size_t i = 0; i < n; ++i) gt[i] -= s * (p[i] - t[i]);
  });
}

/// Diagonal Gaussian log-density of each row of `actions` under
/// N(mean[b], exp(log_std)^2) -> [b].
template <class T>
Var<T> gaussian_log_prob(Var<T> mean, Var<T> log_std, const Tensor<T>& actions) {
  detail::require_rank(mean, 2, "gaussian_log_prob");
  const std::size_t b = mean.shape()[0], a = mean.shape()[1];
  if (log_std.size() != a || actions.shape() != mean.shape())
    throw DimensionError("gaussian_log_prob: shape mismatch");
  auto mu = mean.value().data(), ls = log_std.value().data();
  Tensor<T> out({b});
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < a; ++k) {
      const double z = (double(actions[i * a + k]) - mu[i * a + k]) / std::exp(double(ls[k]));
      s += -0.5 * z * z - ls[k] - half_log_2pi;
    }
    out[i] = static_cast<T>(s);
  }
  return mean.tape().record(std::move(out), {mean, log_std},
                            [mean, log_std, actions, b, a](Tape<T>& tape, std::span<const T> g) {
                              auto mu = mean.value().data(), ls = log_std.value().data();
                              auto gm = tape.grad(mean.id());
                              auto gl = tape.grad(log_std.id());
                              for (std::size_t i = 0; i < b; ++i)
                                for (std::size_t k = 0; k < a; ++k) {
                                  const double sd = std::exp(double(ls[k]));
                                  const double z = (double(actions[i * a + k]) - mu[i * a + k]) / sd;
                                  if (!gm.empty()) gm[i * a + k] += static_cast<T>(g[i] * z / sd);
                                  if (!gl.empty()) gl[k] += static_cast<T>(g[i] * (z * z - 1.0));
                                }
                            });
}

/// Sum_i w_i v_i / n for a vector v[n] and constant weights.
template <class T>
Var<T> weighted_mean(Var<T> v, std::vector<T> weights) {
  if (weights.size() != v.size()) throw DimensionError("weighted_mean: weight count mismatch");
  if (weights.empty()) throw EmptySetError("weighted_mean: empty input");
  double s = 0;
  auto x = v.value().data();
  for (std::size_t i = 0; i < x.size(); ++i) s += double(weights[i]) * x[i];
  const std::size_t n = x.size();
  return v.tape().record(Tensor<T>::scalar(static_cast<T>(s / double(n))), {v},
                         [v, n, weights = std::move(weights)](Tape<T>& tape, std::span<const T> g) {
                           auto gv = tape.grad(v.id());
                           for (std::size_t i = 0; i < n; ++i) gv[i] += g[0] * weights[i] / T(n);
                         });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

// col[(c*9 + ky*3 + kx) x (y*w + x)] for a 3x3 kernel with zero padding 1.
template <class T>
void im2col3(const T* img, std::size_t ch, std::size_t h, std::size_t w, T* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* dst = col + (c * 9 + ky * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = long(y) + long(ky) - 1;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = long(x) + long(kx) - 1;
            dst[y * w + x] = (sy < 0 || sx < 0 || sy >= long(h) || sx >= long(w))
                                 ? T(0)
                                 : img[(c * h + std::size_t(sy)) * w + std::size_t(sx)];
          }
        }
      }
}

template <class T>
void col2im3(const T* col, std::size_t ch, std::size_t h, std::size_t w, T* img) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* src = col + (c * 9 + ky * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = long(y) + long(ky) - 1;
          if (sy < 0 || sy >= long(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = long(x) + long(kx) - 1;
            if (sx < 0 || sx >= long(w)) continue;
            img[(c * h + std::size_t(sy)) * w + std::size_t(sx)] += src[y * w + x];
          }
        }
      }
}

}  // namespace detail

/// 3x3 convolution, stride 1, zero padding 1.
/// x: [b, c, h, w]; weight: [o, c*9]; bias: [o] -> [b, o, h, w].
template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias) {
  detail::require_rank(x, 4, "conv2d");
  const std::size_t b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  detail::require_rank(weight, 2, "conv2d");
  const std::size_t o = weight.shape()[0];
  if (weight.shape()[1] != c * 9 || bias.size() != o) throw DimensionError("conv2d: weight shape mismatch");
  const std::size_t hw = h * w, k = c * 9;
  Tensor<T> out({b, o, h, w});
  std::vector<T> col(k * hw);
  auto xv = x.value().data().data();
  auto wv = weight.value().data().data();
  auto bv = bias.value().data();
  for (std::size_t n = 0; n < b; ++n) {
    detail::im2col3(xv + n * c * hw, c, h, w, col.data());
    T* dst = out.data().data() + n * o * hw;
    for (std::size_t oc = 0; oc < o; ++oc) std::fill(dst + oc * hw, dst + (oc + 1) * hw, bv[oc]);
    detail::gemm_nn(o, hw, k, wv, col.data(), dst, true);
  }
  return x.tape().record(std::move(out), {x, weight, bias},
                         [x, weight, bias, b, c, h, w, o](Tape<T>& tape, std::span<const T> g) {
                           const std::size_t hw = h * w, k = c * 9;
                           auto gx = tape.grad(x.id());
                           auto gw = tape.grad(weight.id());
                           auto gb = tape.grad(bias.id());
                           std::vector<T> col(k * hw), colt(hw * k), dcol(gx.empty() ? 0 : k * hw);
                           auto xv = x.value().data().data();
                           auto wv = weight.value().data().data();
                           for (std::size_t n = 0; n < b; ++n) {
                             const T* gn = g.data() + n * o * hw;
                             if (!gb.empty())
                               for (std::size_t oc = 0; oc < o; ++oc) {
                                 T s = 0;
                                 for (std::size_t p = 0; p < hw; ++p) s += gn[oc * hw + p];
                                 gb[oc] += s;
                               }
                             if (!gw.empty()) {
                               detail::im2col3(xv + n * c * hw, c, h, w, col.data());
                               detail::transpose_into(k, hw, col.data(), colt.data());
                               detail::gemm_nn(o, k, hw, gn, colt.data(), gw.data(), true);
                             }
                             if (!gx.empty()) {
                               detail::gemm_tn(k, hw, o, wv, gn, dcol.data(), false);
                               detail::col2im3(dcol.data(), c, h, w, gx.data() + n * c * hw);
                             }
                           }
                         });
}

/// 2x2 max pooling with stride 2 over [b, c, h, w]; h and w must be even.
template <class T>
Var<T> maxpool2(Var<T> x) {
  detail::require_rank(x, 4, "maxpool2");
  const std::size_t b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (h % 2 || w % 2) throw DimensionError("maxpool2: spatial size must be even");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out({b, c, oh, ow});
  std::vector<std::size_t> arg(out.size());
  auto xv = x.value().data();
  for (std::size_t plane = 0; plane < b * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = base + (2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * y + dy) * w + 2 * xx + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = plane * oh * ow + y * ow + xx;
        out[o] = xv[best];
        arg[o] = best;
      }
  }
  return x.tape().record(std::move(out), {x}, [x, arg = std::move(arg)](Tape<T>& tape, std::span<const T> g) {
    auto gx = tape.grad(x.id());
    for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += g[i];
  });
}

}  // namespace mcl::diff
