#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "mcl/diff.hpp"
#include "mcl/rng.hpp"

namespace mcl::tasks {

using diff::ParamList;
using diff::Tape;
using diff::Tensor;
using diff::Var;

/// Maps a batch of raw inputs to embeddings [B x output_dim].
class Encoder {
 public:
  virtual ~Encoder() = default;

  /// Binds the parameters onto `tape`; frozen parameters act as constants.
  virtual Var<float> forward(Tape<float>& tape, const Tensor<float>& input) = 0;
  virtual ParamList<float> params() = 0;
  virtual std::size_t output_dim() const = 0;
  virtual std::unique_ptr<Encoder> clone() const = 0;

  void set_trainable(bool on) {
    for (auto& p : params()) p.tensor->set_requires_grad(on);
  }
};

namespace detail {

inline Tensor<float> he_normal(diff::Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<float> t(std::move(shape));
  const double sd = std::sqrt(2.0 / double(fan_in));
  for (auto& v : t.data()) v = static_cast<float>(normal(rng, 0.0, sd));
  t.set_requires_grad(true);
  return t;
}

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for dense layers.
inline Tensor<float> fan_in_uniform(diff::Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<float> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (auto& v : t.data()) v = static_cast<float>(uniform(rng, -bound, bound));
  t.set_requires_grad(true);
  return t;
}

inline Tensor<float> zeros(diff::Shape shape) {
  Tensor<float> t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

}  // namespace detail

/// Fully connected stack with ReLU between layers. `relu_output` also
/// rectifies the last layer.
class Mlp final : public Encoder {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> sizes, bool relu_output, Rng& rng, std::string prefix = "mlp",
      std::string group = "encoder")
      : sizes_(std::move(sizes)), relu_output_(relu_output), prefix_(std::move(prefix)), group_(std::move(group)) {
    if (sizes_.size() < 2) throw ContractError("mlp needs at least input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      weights_.push_back(detail::fan_in_uniform({sizes_[l], sizes_[l + 1]}, sizes_[l], rng));
      biases_.push_back(detail::fan_in_uniform({sizes_[l + 1]}, sizes_[l], rng));
    }
  }

  Var<float> forward(Tape<float>& tape, const Tensor<float>& input) override {
    if (input.rank() != 2 || input.cols() != sizes_.front())
      throw DimensionError("mlp input must be [B x " + std::to_string(sizes_.front()) + "]");
    return forward(tape, tape.constant(input.detached()));
  }

  /// Same as above for an input already on the tape.
  Var<float> forward(Tape<float>& tape, Var<float> h) {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = diff::add_row_bias(diff::matmul(h, tape.param(weights_[l])), tape.param(biases_[l]));
      if (l + 1 < weights_.size() || relu_output_) h = diff::relu(h);
    }
    return h;
  }

  ParamList<float> params() override {
    ParamList<float> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back({prefix_ + ".w" + std::to_string(l), group_, &weights_[l]});
      out.push_back({prefix_ + ".b" + std::to_string(l), group_, &biases_[l]});
    }
    return out;
  }

  std::size_t output_dim() const override { return sizes_.back(); }
  std::size_t input_dim() const { return sizes_.front(); }
  std::unique_ptr<Encoder> clone() const override { return std::make_unique<Mlp>(*this); }

 private:
  std::vector<std::size_t> sizes_;
  bool relu_output_ = false;
  std::string prefix_, group_;
  std::vector<Tensor<float>> weights_, biases_;
};

/// Four blocks of 3x3 conv -> ReLU -> 2x2 max-pool over 32x32 RGB input,
/// flattened. The last block has embed_dim / 4 channels so the flattened
/// 2x2 map has exactly embed_dim entries.
class ConvEncoder final : public Encoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(std::size_t width, std::size_t embed_dim, Rng& rng, std::string group = "backbone")
      : embed_dim_(embed_dim), group_(std::move(group)) {
    if (embed_dim % 4 != 0) throw ConfigError("conv encoder embedding size must be divisible by 4");
    std::size_t in = 3;
    for (std::size_t b = 0; b < 4; ++b) {
      const std::size_t out = b == 3 ? embed_dim / 4 : width;
      weights_.push_back(detail::he_normal({out, in * 9}, in * 9, rng));
      biases_.push_back(detail::zeros({out}));
      in = out;
    }
  }

  Var<float> forward(Tape<float>& tape, const Tensor<float>& input) override {
    if (input.rank() != 4 || input.dim(1) != 3 || input.dim(2) != 32 || input.dim(3) != 32)
      throw DimensionError("conv encoder input must be [B x 3 x 32 x 32], got " + diff::to_string(input.shape()));
    Var<float> h = tape.constant(input.detached());
    for (std::size_t b = 0; b < weights_.size(); ++b)
      h = diff::maxpool2(diff::relu(diff::conv2d(h, tape.param(weights_[b]), tape.param(biases_[b]))));
    return diff::reshape(h, {input.dim(0), embed_dim_});
  }

  ParamList<float> params() override {
    ParamList<float> out;
    for (std::size_t b = 0; b < weights_.size(); ++b) {
      out.push_back({"backbone.conv" + std::to_string(b) + ".w", group_, &weights_[b]});
      out.push_back({"backbone.conv" + std::to_string(b) + ".b", group_, &biases_[b]});
    }
    return out;
  }

  std::size_t output_dim() const override { return embed_dim_; }
  std::unique_ptr<Encoder> clone() const override { return std::make_unique<ConvEncoder>(*this); }

 private:
  std::size_t embed_dim_ = 64;
  std::string group_;
  std::vector<Tensor<float>> weights_, biases_;
};

/// Passes vector inputs through unchanged.
class IdentityEncoder final : public Encoder {
 public:
  explicit IdentityEncoder(std::size_t dim) : dim_(dim) {}
  Var<float> forward(Tape<float>& tape, const Tensor<float>& input) override {
    if (input.rank() != 2 || input.cols() != dim_) throw DimensionError("identity encoder: bad input shape");
    return tape.constant(input.detached());
  }
  ParamList<float> params() override { return {}; }
  std::size_t output_dim() const override { return dim_; }
  std::unique_ptr<Encoder> clone() const override { return std::make_unique<IdentityEncoder>(*this); }

 private:
  std::size_t dim_;
};

}  // namespace mcl::tasks
