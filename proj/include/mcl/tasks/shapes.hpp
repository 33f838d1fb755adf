#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mcl/rng.hpp"
#include "mcl/tasks/pool.hpp"

namespace mcl::tasks {

enum class ShapeKind : std::uint8_t { Circle, Triangle, Quadrilateral, Hexagon, Pentagon };
enum class Color : std::uint8_t { Black, Blue, Green, Orange, Red, Yellow };

inline constexpr std::size_t kNumShapes = 5;
inline constexpr std::size_t kNumColors = 6;

inline const char* name(ShapeKind s) {
  static constexpr const char* names[] = {"circle", "triangle", "quadrilateral", "hexagon", "pentagon"};
  return names[static_cast<int>(s)];
}

inline const char* name(Color c) {
  static constexpr const char* names[] = {"black", "blue", "green", "orange", "red", "yellow"};
  return names[static_cast<int>(c)];
}

inline std::array<std::uint8_t, 3> rgb(Color c) {
  switch (c) {
    case Color::Black: return {20, 20, 20};
    case Color::Blue: return {30, 70, 220};
    case Color::Green: return {40, 170, 60};
    case Color::Orange: return {245, 140, 20};
    case Color::Red: return {215, 30, 35};
    case Color::Yellow: return {245, 225, 40};
  }
  return {0, 0, 0};
}

using Image = std::array<std::uint8_t, kImageBytes>;

/// One colored shape on a 32x32 canvas. Placement lives in the struct itself,
/// so rendering depends on nothing else.
struct ShapeSpec {
  ShapeKind shape = ShapeKind::Circle;
  Color color = Color::Black;
  double cx = 16.0, cy = 16.0;  // centre in pixel units
  double radius = 10.0;         // circumradius
  double rotation = 0.0;        // radians
  std::uint64_t seed = 0;

  /// Placement jitter drawn from `seed`; the shape always fits inside the canvas.
  static ShapeSpec sample(ShapeKind shape, Color color, std::uint64_t seed) {
    Rng rng = stream(seed, "shape-jitter");
    ShapeSpec s;
    s.shape = shape;
    s.color = color;
    s.seed = seed;
    s.radius = uniform(rng, 8.0, 13.0);
    const double margin = s.radius + 1.0;
    s.cx = uniform(rng, margin, double(kImageSide) - margin);
    s.cy = uniform(rng, margin, double(kImageSide) - margin);
    s.rotation = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    return s;
  }
};

namespace detail {

inline std::size_t polygon_sides(ShapeKind s) {
  switch (s) {
    case ShapeKind::Triangle: return 3;
    case ShapeKind::Quadrilateral: return 4;
    case ShapeKind::Pentagon: return 5;
    case ShapeKind::Hexagon: return 6;
    case ShapeKind::Circle: break;
  }
  return 0;
}

// Convex regular polygon test: point lies on the inner side of every edge.
inline bool inside_polygon(double px, double py, const ShapeSpec& s, std::size_t sides) {
  std::vector<std::array<double, 2>> v(sides);
  for (std::size_t k = 0; k < sides; ++k) {
    const double a = s.rotation + 2.0 * std::numbers::pi * double(k) / double(sides);
    v[k] = {s.cx + s.radius * std::cos(a), s.cy + s.radius * std::sin(a)};
  }
  for (std::size_t k = 0; k < sides; ++k) {
    const auto& a = v[k];
    const auto& b = v[(k + 1) % sides];
    const double cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
    if (cross < 0) return false;
  }
  return true;
}

}  // namespace detail

/// White canvas with the shape filled in its color (pixel-centre sampling).
inline Image render_shape(const ShapeSpec& spec) {
  Image img;
  img.fill(255);
  const auto col = rgb(spec.color);
  const std::size_t sides = detail::polygon_sides(spec.shape);
  for (std::size_t y = 0; y < kImageSide; ++y)
    for (std::size_t x = 0; x < kImageSide; ++x) {
      const double px = double(x) + 0.5, py = double(y) + 0.5;
      bool in;
      if (sides == 0) {
        const double dx = px - spec.cx, dy = py - spec.cy;
        in = dx * dx + dy * dy <= spec.radius * spec.radius;
      } else {
        in = detail::inside_polygon(px, py, spec, sides);
      }
      if (!in) continue;
      for (std::size_t c = 0; c < kChannels; ++c) img[(y * kImageSide + x) * kChannels + c] = col[c];
    }
  return img;
}

inline std::uint16_t combined_label(ShapeKind s, Color c) {
  return static_cast<std::uint16_t>(static_cast<std::size_t>(s) * kNumColors + static_cast<std::size_t>(c));
}

/// 30 classes (5 shapes x 6 colors), `per_class` images each, class-major
/// order. Attribute labels carry the shape and color ids separately, so
/// `relabeled(LabelKind::Shape)` gives the shape-classification view and
/// `relabeled(LabelKind::Color)` the color-classification view.
inline LabeledPool gen_shapes_dataset(std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw ContractError("gen_shapes_dataset: per_class must be >= 1");
  std::vector<std::uint8_t> pixels;
  pixels.reserve(kNumShapes * kNumColors * per_class * kImageBytes);
  std::vector<std::uint16_t> labels;
  std::vector<std::uint8_t> shapes, colors;
  for (std::size_t s = 0; s < kNumShapes; ++s)
    for (std::size_t c = 0; c < kNumColors; ++c)
      for (std::size_t i = 0; i < per_class; ++i) {
        const auto shape = static_cast<ShapeKind>(s);
        const auto color = static_cast<Color>(c);
        const std::uint64_t item_seed = splitmix64(seed ^ splitmix64((s * kNumColors + c) * 1000003ULL + i));
        const Image img = render_shape(ShapeSpec::sample(shape, color, item_seed));
        pixels.insert(pixels.end(), img.begin(), img.end());
        labels.push_back(combined_label(shape, color));
        shapes.push_back(static_cast<std::uint8_t>(s));
        colors.push_back(static_cast<std::uint8_t>(c));
      }
  auto pool = LabeledPool::images(std::move(pixels), std::move(labels));
  pool.set_attributes(std::move(shapes), std::move(colors));
  return pool;
}

}  // namespace mcl::tasks
