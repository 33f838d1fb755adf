#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mcl/components.hpp"
#include "mcl/diff.hpp"
#include "mcl/rng.hpp"

using namespace mcl;
using namespace mcl::diff;

namespace {

Tensor<float> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<float> t(std::move(s));
  for (auto& v : t.data()) v = static_cast<float>(uniform(rng, lo, hi));
  t.set_requires_grad(true);
  return t;
}

constexpr double kTol = 1e-3;

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor<float>({0, 2}), DimensionError);
}

TEST(Matmul, IdentityAndDot) {
  Tape<float> t;
  auto r = matmul(t.constant(Tensor<float>::matrix({{1, 0}, {0, 1}})), t.constant(Tensor<float>::matrix({{2}, {3}})));
  EXPECT_EQ(r.value().storage(), (std::vector<float>{2, 3}));
  auto d = matmul(t.constant(Tensor<float>::matrix({{1, 2}})), t.constant(Tensor<float>::matrix({{3}, {4}})));
  EXPECT_FLOAT_EQ(d.value().item(), 11.0f);
}

TEST(Matmul, ShapeMismatch) {
  Tape<float> t;
  EXPECT_THROW(matmul(t.constant(Tensor<float>({2, 3})), t.constant(Tensor<float>({2, 3}))), DimensionError);
}

TEST(Matmul, GradientOfSum) {
  // Frozen from central differences (h = 1e-3): d sum(a b) / da = b^T = [[2, 5]].
  Tensor<float> a = Tensor<float>::matrix({{1, 1}});
  a.set_requires_grad(true);
  Tensor<float> b = Tensor<float>::matrix({{2}, {5}});
  Tape<float> t;
  t.backward(sum(matmul(t.param(a), t.constant(b))));
  ASSERT_TRUE(a.has_grad());
  EXPECT_NEAR(a.grad()[0], 2.0f, 1e-6);
  EXPECT_NEAR(a.grad()[1], 5.0f, 1e-6);
  ScalarFn<float> f = [&](Tape<float>& tp) { return sum(matmul(tp.param(a), tp.constant(b))); };
  EXPECT_LT(grad_check(f, {&a}, 1e-3), kTol);
}

TEST(Relu, ValuesAndSubgradient) {
  Tape<float> t;
  auto r = relu(t.constant(Tensor<float>::vector({-1, 0, 2})));
  EXPECT_EQ(r.value().storage(), (std::vector<float>{0, 0, 2}));
  auto pos = relu(t.constant(Tensor<float>::vector({0.5f, 3.0f})));
  EXPECT_EQ(pos.value().storage(), (std::vector<float>{0.5f, 3.0f}));

  Tensor<float> x = Tensor<float>::vector({-1, 2});
  x.set_requires_grad(true);
  Tape<float> t2;
  t2.backward(sum(relu(t2.param(x))));
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{0, 1}));

  Tensor<float> z = Tensor<float>::vector({0});
  z.set_requires_grad(true);
  Tape<float> t3;
  t3.backward(sum(relu(t3.param(z))));
  EXPECT_EQ(z.grad()[0], 0.0f);
}

TEST(MeanRows, ValuesAndGradient) {
  Tape<float> t;
  EXPECT_EQ(mean_rows(t.constant(Tensor<float>::matrix({{0, 2}, {2, 0}}))).value().storage(),
            (std::vector<float>{1, 1}));
  EXPECT_EQ(mean_rows(t.constant(Tensor<float>::matrix({{3, 4}}))).value().storage(), (std::vector<float>{3, 4}));
  Rng rng(11);
  Tensor<float> x = random_tensor({3, 2}, rng);
  Tensor<float> w = random_tensor({2}, rng);
  w.set_requires_grad(false);
  ScalarFn<float> f = [&](Tape<float>& tp) { return sum_squares(mul(mean_rows(tp.param(x)), tp.constant(w))); };
  EXPECT_LT(grad_check(f, {&x}), kTol);
}

TEST(Cosine, ReferenceValues) {
  Tape<float> t;
  auto v = [&](std::initializer_list<float> l) { return t.constant(Tensor<float>::vector(l)); };
  EXPECT_NEAR(cosine(v({3, 4}), v({3, 4})).value().item(), 1.0f, 1e-6);
  EXPECT_NEAR(cosine(v({1, 0}), v({0, 1})).value().item(), 0.0f, 1e-6);
  EXPECT_NEAR(cosine(v({1, 0}), v({-2, 0})).value().item(), -1.0f, 1e-6);
  EXPECT_THROW(cosine(v({0, 0}), v({1, 0})), DegenerateInputError);
}

TEST(Cosine, RangeAndGradientProperty) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t d = 1 + seed % 7;
    Tensor<float> u = random_tensor({d}, rng), v = random_tensor({d}, rng);
    Tape<float> t;
    const float c = cosine(t.param(u), t.param(v)).value().item();
    EXPECT_GE(c, -1.0f - 1e-6f);
    EXPECT_LE(c, 1.0f + 1e-6f);
    if (seed < 10) {
      ScalarFn<float> f = [&](Tape<float>& tp) { return cosine(tp.param(u), tp.param(v)); };
      EXPECT_LT(grad_check(f, {&u, &v}), kTol) << "seed " << seed;
    }
  }
}

TEST(CrossEntropy, ReferenceValues) {
  Tape<float> t;
  EXPECT_NEAR(cross_entropy(t.constant(Tensor<float>::matrix({{0, 0}})), {0}).value().item(), std::log(2.0), 1e-6);
  auto big = cross_entropy(t.constant(Tensor<float>::matrix({{1000, 0}})), {0}).value().item();
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_NEAR(big, 0.0f, 1e-6);
  EXPECT_THROW(cross_entropy(t.constant(Tensor<float>::matrix({{0, 0}})), {2}), IndexError);
}

TEST(CrossEntropy, GradientAndShiftInvariance) {
  Rng rng(5);
  Tensor<float> z = random_tensor({2, 3}, rng, -2, 2);
  std::vector<std::size_t> labels{2, 0};
  ScalarFn<float> f = [&](Tape<float>& tp) { return cross_entropy(tp.param(z), labels); };
  EXPECT_LT(grad_check(f, {&z}), kTol);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    Tensor<float> a = random_tensor({3, 4}, r, -3, 3);
    Tensor<float> b = a.detached();
    const float shift = static_cast<float>(uniform(r, -10, 10));
    for (std::size_t j = 0; j < 4; ++j) b.at(1, j) += shift;
    Tape<float> t;
    std::vector<std::size_t> l{0, 3, 1};
    EXPECT_NEAR(cross_entropy(t.constant(a), l).value().item(), cross_entropy(t.constant(b), l).value().item(), 1e-5);
  }
}

TEST(Mse, ValuesAndGradient) {
  Tape<float> t;
  EXPECT_EQ(mse(t.constant(Tensor<float>::vector({1, 2})), t.constant(Tensor<float>::vector({1, 2}))).value().item(),
            0.0f);
  Tensor<float> p = Tensor<float>::vector({0});
  p.set_requires_grad(true);
  Tape<float> t2;
  auto l = mse(t2.param(p), t2.constant(Tensor<float>::vector({2})));
  EXPECT_FLOAT_EQ(l.value().item(), 4.0f);
  t2.backward(l);
  EXPECT_FLOAT_EQ(p.grad()[0], -4.0f);
  EXPECT_THROW(mse(t.constant(Tensor<float>::vector({1})), t.constant(Tensor<float>::vector({1, 2}))),
               DimensionError);
}

TEST(Backward, SumOfLeafAndFanOut) {
  Tensor<float> x = Tensor<float>::matrix({{1, 2}, {3, 4}});
  x.set_requires_grad(true);
  Tape<float> t;
  t.backward(sum(t.param(x)));
  for (float g : x.grad()) EXPECT_EQ(g, 1.0f);

  Tensor<float> y = Tensor<float>::scalar(3);
  y.set_requires_grad(true);
  Tape<float> t2;
  auto v = t2.param(y);
  t2.backward(sum(add(v, v)));
  EXPECT_EQ(y.grad()[0], 2.0f);
}

TEST(Backward, FanOutEqualsSumOfBranches) {
  Rng rng(3);
  Tensor<float> x = random_tensor({4}, rng);
  Tensor<float> w = random_tensor({4}, rng);
  auto grad_of = [&](int which) {
    x.clear_grad();
    Tape<float> t;
    auto xv = t.param(x);
    auto f = sum_squares(xv);
    auto g = sum(mul(xv, t.constant(w)));
    Var<float> loss = which == 0 ? f : which == 1 ? g : add(f, g);
    t.backward(loss);
    return std::vector<float>(x.grad().begin(), x.grad().end());
  };
  auto gf = grad_of(0), gg = grad_of(1), both = grad_of(2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(both[i], gf[i] + gg[i], 1e-6);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape<float> t;
  auto v = t.constant(Tensor<float>::vector({1, 2}));
  EXPECT_THROW(t.backward(v), ContractError);
}

TEST(Sgd, Steps) {
  Tensor<float> p = Tensor<float>::scalar(1);
  p.accumulate_grad(std::vector<float>{2});
  SgdConfig cfg{0.1, {}};
  sgd_step<float>({{"p", "head", &p}}, cfg);
  EXPECT_FLOAT_EQ(p[0], 0.8f);
  EXPECT_FALSE(p.has_grad());

  Tensor<float> q = Tensor<float>::scalar(1);
  q.accumulate_grad(std::vector<float>{1});
  SgdConfig scaled{0.002, {{"backbone", 0.1}}};
  sgd_step<float>({{"q", "backbone", &q}}, scaled);
  EXPECT_NEAR(q[0], 0.9998f, 1e-7);

  Tensor<float> r = Tensor<float>::scalar(5);
  r.accumulate_grad(std::vector<float>{0});
  sgd_step<float>({{"r", "x", &r}}, cfg);
  EXPECT_EQ(r[0], 5.0f);

  Tensor<float> missing = Tensor<float>::scalar(1);
  EXPECT_THROW(sgd_step<float>({{"m", "x", &missing}}, cfg), ContractError);
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
  Rng rng(9);
  Tensor<float> p = random_tensor({3, 3}, rng);
  Tensor<float> before = p.detached();
  std::vector<float> g(9);
  for (auto& v : g) v = static_cast<float>(normal(rng));
  p.accumulate_grad(g);
  sgd_step<float>({{"p", "g", &p}}, SgdConfig{0.0, {}});
  EXPECT_TRUE(p.same_bits(before));
}

TEST(GradCheck, QuadraticAndOrthoReg) {
  Tensor<float> x = Tensor<float>::scalar(3);
  ScalarFn<float> f = [&](Tape<float>& tp) { return sum_squares(tp.param(x)); };
  EXPECT_LT(grad_check(f, {&x}, 1e-3), 1e-5);

  Rng rng(21);
  Tensor<float> e = random_tensor({4, 3}, rng);
  ScalarFn<float> r = [&](Tape<float>& tp) { return ortho_reg(tp.param(e)); };
  EXPECT_LT(grad_check(r, {&e}), kTol);
}

TEST(GradCheck, NonFiniteIsDegenerate) {
  Tensor<float> x = Tensor<float>::vector({0, 0});
  Tensor<float> y = Tensor<float>::vector({1, 0});
  ScalarFn<float> f = [&](Tape<float>& tp) { return cosine(tp.param(x), tp.param(y)); };
  EXPECT_THROW(grad_check(f, {&x, &y}), DegenerateInputError);
}

TEST(GradCheck, EveryOpOnRandomInputs) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(100 + seed);
    Tensor<float> a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    Tensor<float> c = random_tensor({3, 4}, rng), bias = random_tensor({4}, rng);
    Tensor<float> img = random_tensor({2, 2, 4, 4}, rng);
    Tensor<float> kw = random_tensor({3, 18}, rng), kb = random_tensor({3}, rng);
    Tensor<float> ls = random_tensor({2}, rng, -0.5, 0.5);
    Tensor<float> act = random_tensor({3, 2}, rng);
    act.set_requires_grad(false);
    Tensor<float> w3 = random_tensor({3}, rng);
    std::vector<float> wts(w3.data().begin(), w3.data().end());
    Tensor<float> mean = random_tensor({3, 2}, rng);
    Tensor<float> a2 = random_tensor({3, 3}, rng);
    a2.set_requires_grad(false);

    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(matmul(t.param(a), t.param(b))); }, {&a, &b}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(transpose(t.param(a))); }, {&a}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(sub(t.param(a), scale(t.param(c), 0.5f))); }, {&a, &c}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(mul(t.param(a), t.param(c))); }, {&a, &c}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(add_row_bias(t.param(a), t.param(bias))); }, {&a, &bias}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum(mul(relu(t.param(a)), t.param(c))); }, {&a}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(max_rows(t.param(a))); }, {&a}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(min_rows(t.param(a))); }, {&a}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(gather_rows(t.param(a), {2, 0, 2})); }, {&a}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum(mul(normalize_rows(t.param(a)), t.param(c))); }, {&a}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(mask_offdiag(matmul(t.param(a), transpose(t.param(c))))); }, {&a, &c}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(reshape(t.param(a), {6, 2})); }, {&a}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) {
                return sum_squares(stack<float>({mean_rows(t.param(a)), mean_rows(t.param(c))}));
              }, {&a, &c}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return mse(t.param(a), t.param(c)); }, {&a, &c}), kTol);
    Tensor<float> probe = random_tensor({2, 3, 4, 4}, rng);
    probe.set_requires_grad(false);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) {
                return sum(mul(conv2d(t.param(img), t.param(kw), t.param(kb)), t.constant(probe)));
              }, {&img, &kw, &kb}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(maxpool2(t.param(img))); }, {&img}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) {
                return weighted_mean(gaussian_log_prob(t.param(mean), t.param(ls), act), wts);
              }, {&mean, &ls}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum_squares(clamp(t.param(a), -0.5f, 0.5f)); }, {&a}), kTol);
    EXPECT_LT(grad_check<float>([&](Tape<float>& t) { return sum(mul(sq_distances(t.param(a), t.param(c)), t.param(a2))); }, {&a, &c}), kTol);
  }
}

TEST(SqDistances, ReferenceValues) {
  Tape<float> t;
  auto a = t.constant(Tensor<float>::matrix({{0, 0}, {1, 1}}));
  auto b = t.constant(Tensor<float>::matrix({{3, 4}}));
  auto d = sq_distances(a, b).value();
  EXPECT_EQ(d.shape(), (Shape{2, 1}));
  EXPECT_FLOAT_EQ(d[0], 25.0f);
  EXPECT_FLOAT_EQ(d[1], 13.0f);
}

TEST(GaussianLogProb, MatchesClosedForm) {
  Tape<float> t;
  auto m = t.constant(Tensor<float>::matrix({{0.0f, 1.0f}}));
  auto ls = t.constant(Tensor<float>::vector({0.0f, std::log(2.0f)}));
  auto lp = gaussian_log_prob(m, ls, Tensor<float>::matrix({{1.0f, 1.0f}}));
  const double expect = (-0.5 - 0.5 * std::log(2 * std::numbers::pi)) + (-std::log(2.0) - 0.5 * std::log(2 * std::numbers::pi));
  EXPECT_NEAR(lp.value()[0], expect, 1e-6);
}

TEST(Conv2d, MatchesDirectConvolution) {
  Rng rng(4);
  Tensor<float> img = random_tensor({1, 2, 5, 6}, rng);
  Tensor<float> w = random_tensor({3, 18}, rng);
  Tensor<float> b = random_tensor({3}, rng);
  Tape<float> t;
  auto out = conv2d(t.constant(img), t.constant(w), t.constant(b)).value();
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        double s = b[o];
        for (std::size_t c = 0; c < 2; ++c)
          for (int ky = -1; ky <= 1; ++ky)
            for (int kx = -1; kx <= 1; ++kx) {
              const int sy = int(y) + ky, sx = int(x) + kx;
              if (sy < 0 || sx < 0 || sy >= 5 || sx >= 6) continue;
              s += double(w.at(o, c * 9 + (ky + 1) * 3 + (kx + 1))) * img[(c * 5 + sy) * 6 + sx];
            }
        EXPECT_NEAR(out[(o * 5 + y) * 6 + x], s, 1e-5);
      }
}

TEST(Conv2d, DoublePrecisionGradient) {
  Rng rng(8);
  auto rnd = [&](Shape s) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = uniform(rng, -1, 1);
    t.set_requires_grad(true);
    return t;
  };
  Tensor<double> img = rnd({2, 2, 4, 4}), w = rnd({3, 18}), b = rnd({3});
  ScalarFn<double> f = [&](Tape<double>& t) { return sum_squares(maxpool2(relu(conv2d(t.param(img), t.param(w), t.param(b))))); };
  EXPECT_LT(grad_check(f, {&img, &w, &b}, 1e-5), 1e-6);
}
