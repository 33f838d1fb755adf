#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcl/diff/tensor.hpp"
#include "mcl/error.hpp"

namespace mcl::tasks {

using diff::Tensor;

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kImageBytes = kImageSide * kImageSide * kChannels;

enum class LabelKind { Combined, Shape, Color };

/// Labelled items for episodic sampling.
///
/// Items are either 32x32 RGB images (interleaved row-major bytes) or plain
/// float vectors. Attribute labels (shape id, color id) are optional.
class LabeledPool {
 public:
  enum class Kind { Image, Vector };

  static LabeledPool images(std::vector<std::uint8_t> pixels, std::vector<std::uint16_t> labels) {
    LabeledPool p;
    p.kind_ = Kind::Image;
    if (pixels.size() != labels.size() * kImageBytes)
      throw DimensionError("image pool: pixel buffer does not match label count");
    p.pixels_ = std::move(pixels);
    p.labels_ = std::move(labels);
    p.reindex();
    return p;
  }

  static LabeledPool vectors(std::size_t dim, std::vector<float> values, std::vector<std::uint16_t> labels) {
    LabeledPool p;
    p.kind_ = Kind::Vector;
    p.dim_ = dim;
    if (values.size() != labels.size() * dim) throw DimensionError("vector pool: value buffer does not match label count");
    p.vectors_ = std::move(values);
    p.labels_ = std::move(labels);
    p.reindex();
    return p;
  }

  Kind kind() const { return kind_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::size_t item_dim() const { return kind_ == Kind::Image ? kImageBytes : dim_; }

  const std::vector<std::uint16_t>& labels() const { return labels_; }
  std::uint16_t label(std::size_t i) const { return labels_.at(i); }
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }
  const std::vector<float>& vector_values() const { return vectors_; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels_).subspan(i * kImageBytes, kImageBytes);
  }

  bool has_attributes() const { return shape_ids_.has_value(); }
  const std::vector<std::uint8_t>& shape_ids() const { return attributes_or_throw(shape_ids_); }
  const std::vector<std::uint8_t>& color_ids() const { return attributes_or_throw(color_ids_); }

  void set_attributes(std::vector<std::uint8_t> shapes, std::vector<std::uint8_t> colors) {
    if (shapes.size() != size() || colors.size() != size())
      throw DimensionError("attribute label count does not match pool size");
    shape_ids_ = std::move(shapes);
    color_ids_ = std::move(colors);
  }

  /// Sorted distinct class labels and the pool indices of each.
  const std::map<std::uint16_t, std::vector<std::size_t>>& by_class() const { return by_class_; }
  std::size_t num_classes() const { return by_class_.size(); }

  /// Same items, class label replaced by one attribute.
  LabeledPool relabeled(LabelKind kind) const {
    if (kind == LabelKind::Combined) return *this;
    LabeledPool p = *this;
    const auto& src = kind == LabelKind::Shape ? shape_ids() : color_ids();
    p.labels_.assign(src.begin(), src.end());
    p.reindex();
    return p;
  }

  /// Subset by pool index, preserving attributes.
  LabeledPool subset(const std::vector<std::size_t>& idx) const {
    LabeledPool p;
    p.kind_ = kind_;
    p.dim_ = dim_;
    for (std::size_t i : idx) {
      if (i >= size()) throw IndexError("pool subset index out of range");
      p.labels_.push_back(labels_[i]);
      if (kind_ == Kind::Image) {
        auto im = image(i);
        p.pixels_.insert(p.pixels_.end(), im.begin(), im.end());
      } else {
        p.vectors_.insert(p.vectors_.end(), vectors_.begin() + i * dim_, vectors_.begin() + (i + 1) * dim_);
      }
    }
    if (has_attributes()) {
      std::vector<std::uint8_t> s, c;
      for (std::size_t i : idx) {
        s.push_back((*shape_ids_)[i]);
        c.push_back((*color_ids_)[i]);
      }
      p.shape_ids_ = std::move(s);
      p.color_ids_ = std::move(c);
    }
    p.reindex();
    return p;
  }

  /// Network input for the given items: images become [B, 3, 32, 32]
  /// planar floats centred at zero; vectors become [B, D].
  Tensor<float> batch(std::span<const std::size_t> idx) const {
    if (idx.empty()) throw EmptySetError("batch: no items");
    if (kind_ == Kind::Vector) {
      Tensor<float> out({idx.size(), dim_});
      for (std::size_t b = 0; b < idx.size(); ++b)
        for (std::size_t j = 0; j < dim_; ++j) out[b * dim_ + j] = vectors_.at(idx[b] * dim_ + j);
      return out;
    }
    constexpr std::size_t hw = kImageSide * kImageSide;
    Tensor<float> out({idx.size(), kChannels, kImageSide, kImageSide});
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto im = image(idx[b]);
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < kChannels; ++c)
          out[(b * kChannels + c) * hw + p] = float(im[p * kChannels + c]) / 255.0f - 0.5f;
    }
    return out;
  }

  bool operator==(const LabeledPool& o) const {
    return kind_ == o.kind_ && dim_ == o.dim_ && pixels_ == o.pixels_ && vectors_ == o.vectors_ &&
           labels_ == o.labels_ && shape_ids_ == o.shape_ids_ && color_ids_ == o.color_ids_;
  }

 private:
  static const std::vector<std::uint8_t>& attributes_or_throw(const std::optional<std::vector<std::uint8_t>>& a) {
    if (!a) throw ContractError("pool has no attribute labels");
    return *a;
  }

  void reindex() {
    by_class_.clear();
    for (std::size_t i = 0; i < labels_.size(); ++i) by_class_[labels_[i]].push_back(i);
  }

  Kind kind_ = Kind::Image;
  std::size_t dim_ = 0;
  std::vector<std::uint8_t> pixels_;
  std::vector<float> vectors_;
  std::vector<std::uint16_t> labels_;
  std::optional<std::vector<std::uint8_t>> shape_ids_;
  std::optional<std::vector<std::uint8_t>> color_ids_;
  std::map<std::uint16_t, std::vector<std::size_t>> by_class_;
};

}  // namespace mcl::tasks
