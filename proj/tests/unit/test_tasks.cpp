#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "mcl/tasks.hpp"

using namespace mcl;
using namespace mcl::tasks;

namespace {

double luminance(const Image& img) {
  double s = 0;
  for (std::size_t p = 0; p < kImageSide * kImageSide; ++p)
    s += 0.299 * img[p * 3] + 0.587 * img[p * 3 + 1] + 0.114 * img[p * 3 + 2];
  return s / double(kImageSide * kImageSide);
}

std::size_t shape_pixels(const Image& img) {
  std::size_t n = 0;
  for (std::size_t p = 0; p < kImageSide * kImageSide; ++p)
    if (img[p * 3] != 255 || img[p * 3 + 1] != 255 || img[p * 3 + 2] != 255) ++n;
  return n;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mcl_test_" + name)).string();
}

}  // namespace

TEST(RenderShape, Deterministic) {
  auto spec = ShapeSpec::sample(ShapeKind::Circle, Color::Red, 0);
  EXPECT_EQ(render_shape(spec), render_shape(spec));
  EXPECT_EQ(render_shape(ShapeSpec::sample(ShapeKind::Circle, Color::Red, 0)), render_shape(spec));
}

TEST(RenderShape, ColorOrdering) {
  auto black = ShapeSpec::sample(ShapeKind::Circle, Color::Black, 3);
  auto yellow = black;
  yellow.color = Color::Yellow;
  EXPECT_LT(luminance(render_shape(black)), luminance(render_shape(yellow)));
}

TEST(RenderShape, ContainmentOverManySeeds) {
  for (std::size_t s = 0; s < kNumShapes; ++s)
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      auto spec = ShapeSpec::sample(static_cast<ShapeKind>(s), Color::Blue, seed);
      const auto img = render_shape(spec);
      const std::size_t n = shape_pixels(img);
      EXPECT_GT(n, 0u);
      EXPECT_LT(n, kImageSide * kImageSide);
      // No shape pixel on the canvas border.
      for (std::size_t i = 0; i < kImageSide; ++i)
        for (std::size_t p : {i, (kImageSide - 1) * kImageSide + i, i * kImageSide, i * kImageSide + kImageSide - 1})
          EXPECT_EQ(img[p * 3], 255);
    }
}

TEST(GenShapes, CountsAndDeterminism) {
  auto pool = gen_shapes_dataset(10, 7);
  EXPECT_EQ(pool.size(), 300u);
  EXPECT_EQ(pool.num_classes(), 30u);
  for (const auto& [label, items] : pool.by_class()) EXPECT_EQ(items.size(), 10u);
  EXPECT_TRUE(pool.has_attributes());
  EXPECT_EQ(pool.relabeled(LabelKind::Shape).num_classes(), 5u);
  EXPECT_EQ(pool.relabeled(LabelKind::Color).num_classes(), 6u);
  for (std::size_t i = 0; i < pool.size(); ++i)
    EXPECT_EQ(pool.label(i), pool.shape_ids()[i] * kNumColors + pool.color_ids()[i]);
  EXPECT_EQ(gen_shapes_dataset(10, 7).pixels(), pool.pixels());
  EXPECT_NE(gen_shapes_dataset(10, 8).pixels(), pool.pixels());
}

TEST(PoolIo, RoundTrip) {
  auto pool = gen_shapes_dataset(3, 1);
  const auto path = temp_path("roundtrip.mcsh");
  save_image_pool(pool, path);
  auto loaded = load_image_pool(path);
  EXPECT_TRUE(loaded == pool);
  EXPECT_EQ(std::filesystem::file_size(path), 4 + 20 + 90 * kImageBytes + 90 * 2 + 1 + 90 * 2);
  std::filesystem::remove(path);
}

TEST(PoolIo, TruncatedAndBadMagic) {
  auto bytes = encode_pool(gen_shapes_dataset(1, 1));
  auto cut = bytes;
  cut.resize(cut.size() - 10);
  try {
    decode_pool(cut);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_pool(bad), FormatError);
  std::vector<std::uint8_t> tiny{'M', 'C'};
  EXPECT_THROW(decode_pool(tiny), FormatError);
}

TEST(PoolIo, EmptyPoolLoadsButCannotSample) {
  auto empty = LabeledPool::images({}, {});
  auto loaded = decode_pool(encode_pool(empty));
  EXPECT_EQ(loaded.size(), 0u);
  Rng rng(1);
  EXPECT_THROW(sample_episode(loaded, 5, 1, 15, rng), CapacityError);
}

TEST(Episode, Counting) {
  auto pool = gen_shapes_dataset(20, 2);
  Rng rng(4);
  auto ep = sample_episode(pool, 5, 1, 15, rng);
  EXPECT_EQ(ep.support.size(), 5u);
  EXPECT_EQ(ep.query.size(), 75u);
  std::set<std::uint16_t> cls(ep.classes.begin(), ep.classes.end());
  EXPECT_EQ(cls.size(), 5u);
  for (std::size_t i = 0; i < ep.support.size(); ++i) EXPECT_EQ(pool.label(ep.support[i]), ep.classes[ep.support_labels[i]]);
  for (std::size_t i = 0; i < ep.query.size(); ++i) EXPECT_EQ(pool.label(ep.query[i]), ep.classes[ep.query_labels[i]]);
}

TEST(Episode, DisjointOverManyEpisodes) {
  auto pool = gen_shapes_dataset(17, 3).relabeled(LabelKind::Shape);
  Rng rng(5);
  for (int e = 0; e < 10000; ++e) {
    auto ep = sample_episode(pool, 5, 1 + e % 5, 15, rng);
    std::set<std::size_t> s(ep.support.begin(), ep.support.end());
    EXPECT_EQ(s.size(), ep.support.size());
    for (std::size_t q : ep.query) ASSERT_EQ(s.count(q), 0u);
    std::set<std::size_t> qs(ep.query.begin(), ep.query.end());
    ASSERT_EQ(qs.size(), ep.query.size());
  }
}

TEST(Episode, DeterministicGivenSeed) {
  auto pool = gen_shapes_dataset(20, 2);
  Rng a(99), b(99);
  auto e1 = sample_episode(pool, 5, 2, 3, a), e2 = sample_episode(pool, 5, 2, 3, b);
  EXPECT_EQ(e1.support, e2.support);
  EXPECT_EQ(e1.query, e2.query);
  EXPECT_EQ(e1.classes, e2.classes);
}

TEST(Episode, CapacityErrors) {
  auto pool = gen_shapes_dataset(5, 2);
  Rng rng(1);
  EXPECT_THROW(sample_episode(pool, 5, 1, 15, rng), CapacityError);
  EXPECT_THROW(sample_episode(pool, 31, 1, 1, rng), CapacityError);
}

TEST(Episode, ClassFrequencyUniformWithinThreeSigma) {
  auto pool = gen_shapes_dataset(4, 2);
  Rng rng(6);
  const int episodes = 6000;
  std::vector<int> hits(30, 0);
  for (int e = 0; e < episodes; ++e)
    for (auto c : sample_episode(pool, 5, 1, 1, rng).classes) ++hits[c];
  const double p = 5.0 / 30.0;
  const double mean = episodes * p, sd = std::sqrt(episodes * p * (1 - p));
  for (int h : hits) EXPECT_LT(std::abs(h - mean), 3.0 * sd);
}

TEST(Sinusoid, ReferenceValues) {
  SinusoidTask t{1.0, 0.0};
  EXPECT_NEAR(t(std::numbers::pi / 2), 1.0, 1e-12);
  SinusoidTask u{2.0, std::numbers::pi};
  EXPECT_NEAR(u(0.0), 0.0, 1e-12);
}

TEST(Sinusoid, RangesOverManyDraws) {
  Rng rng(8);
  for (int i = 0; i < 10000; ++i) {
    auto t = sample_sinusoid_task(rng);
    ASSERT_GE(t.amplitude, 0.1);
    ASSERT_LE(t.amplitude, 5.0);
    ASSERT_GE(t.phase, 0.0);
    ASSERT_LE(t.phase, std::numbers::pi);
  }
  auto t = sample_sinusoid_task(rng);
  auto pts = sample_points(t, 500, rng);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_GE(pts.x[i], -5.0f);
    EXPECT_LE(pts.x[i], 5.0f);
    EXPECT_EQ(pts.y[i], static_cast<float>(t(pts.x[i])));
  }
  EXPECT_THROW(sample_points(t, 0, rng), ContractError);
}

TEST(Sinusoid, EvalGrid) {
  SinusoidTask t{3.0, 1.0};
  auto g = eval_grid(t);
  ASSERT_EQ(g.size(), 1000u);
  EXPECT_EQ(g.x.front(), -5.0f);
  EXPECT_EQ(g.x.back(), 5.0f);
  for (std::size_t i = 1; i < g.size(); ++i) {
    EXPECT_GT(g.x[i], g.x[i - 1]);
    EXPECT_NEAR(g.x[i] - g.x[i - 1], 10.0 / 999.0, 1e-5);
  }
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g.y[i], 3.0 * std::sin(double(g.x[i]) + 1.0), 1e-6);
}

TEST(Encoders, ShapesAndDeterminism) {
  Rng rng(1);
  ConvEncoder enc(32, 64, rng);
  auto pool = gen_shapes_dataset(2, 1);
  std::vector<std::size_t> idx{0, 5, 17};
  auto batch = pool.batch(idx);
  EXPECT_EQ(batch.shape(), (diff::Shape{3, 3, 32, 32}));
  diff::Tape<float> t1, t2;
  auto a = enc.forward(t1, batch).value();
  auto b = enc.forward(t2, batch).value();
  EXPECT_EQ(a.shape(), (diff::Shape{3, 64}));
  EXPECT_TRUE(a.same_bits(b));
  EXPECT_EQ(enc.params().size(), 8u);

  Mlp body({1, 40, 40}, true, rng);
  diff::Tape<float> t3;
  EXPECT_EQ(body.forward(t3, Tensor<float>({7, 1})).shape(), (diff::Shape{7, 40}));
  EXPECT_THROW(body.forward(t3, Tensor<float>({7, 2})), DimensionError);
}

TEST(Encoders, MlpGradient) {
  Rng rng(2);
  Mlp net({3, 5, 2}, false, rng);
  Tensor<float> x({4, 3});
  for (auto& v : x.data()) v = static_cast<float>(normal(rng));
  std::vector<Tensor<float>*> pts;
  for (auto& p : net.params()) pts.push_back(p.tensor);
  diff::ScalarFn<float> f = [&](diff::Tape<float>& t) { return diff::sum_squares(net.forward(t, x)); };
  EXPECT_LT(diff::grad_check(f, pts), 1e-3);
}

TEST(Encoders, ConvThroughput) {
  Rng rng(1);
  ConvEncoder enc(32, 64, rng);
  auto pool = gen_shapes_dataset(3, 1);
  std::vector<std::size_t> idx(80);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto batch = pool.batch(idx);
  auto t0 = std::chrono::steady_clock::now();
  diff::Tape<float> tape;
  auto out = enc.forward(tape, batch);
  auto t1 = std::chrono::steady_clock::now();
  tape.backward(diff::sum_squares(out));
  auto t2 = std::chrono::steady_clock::now();
  std::printf("conv encoder, 80 images: forward %.1f ms, backward %.1f ms\n",
              std::chrono::duration<double, std::milli>(t1 - t0).count(),
              std::chrono::duration<double, std::milli>(t2 - t1).count());
}
