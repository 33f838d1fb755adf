#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "mcl/diff/tensor.hpp"

namespace mcl::diff {

template <class T>
class Tape;

/// Handle to a value recorded on a Tape.
template <class T = float>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool needs_grad() const { return tape_->needs_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of differentiable operations.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// `backward` walks the record once in reverse. Leaves created with `param`
/// are bound to caller-owned tensors and receive their gradient on backward.
template <class T = float>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::span<const T>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.value.clear_grad();
    n.value.set_requires_grad(false);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Leaf bound to `param`; the gradient lands in `param.grad()` on backward.
  Var<T> param(Tensor<T>& param) {
    Node n;
    n.value = param.detached();
    n.needs_grad = param.requires_grad();
    n.bound = param.requires_grad() ? &param : nullptr;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Appends an op result. `backward` is kept only if some input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ContractError("operands live on different tapes");
      n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator of node `id`, zero-initialised on first access.
  /// Returns an empty span for nodes that do not need a gradient.
  std::span<T> grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.needs_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }

  /// Gradient of a node after backward (zeros if nothing flowed into it).
  std::vector<T> grad_of(Var<T> v) {
    auto g = grad(v.id());
    if (g.empty()) return std::vector<T>(v.size(), T(0));
    return std::vector<T>(g.begin(), g.end());
  }

  /// Reverse sweep from a scalar loss. Bound parameters accumulate their
  /// gradient additively; a parameter reached by no path gets a zero gradient.
  void backward(Var<T> loss) {
    if (&loss.tape() != this) throw ContractError("loss belongs to another tape");
    if (loss.size() != 1)
      throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
    if (!nodes_[loss.id()].needs_grad) {
      bind_gradients();
      return;
    }
    grad(loss.id())[0] = T(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, std::span<const T>(n.grad));
    }
    bind_gradients();
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool needs_grad = false;
    Tensor<T>* bound = nullptr;
    Backward backward;
  };

  void bind_gradients() {
    for (Node& n : nodes_) {
      if (!n.bound) continue;
      if (n.grad.empty())
        n.bound->accumulate_grad(std::vector<T>(n.value.size(), T(0)));
      else
        n.bound->accumulate_grad(n.grad);
    }
  }

  std::deque<Node> nodes_;
};

}  // namespace mcl::diff
