// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mcl/io.hpp"
#include "mcl/navrl.hpp"
#include "mcl/tasks.hpp"
#include "mcl/train.hpp"

using namespace mcl;
using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[2048];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0 : s / double(v.size());
}

// ---------------------------------------------------------------- 1

Verdict sinusoid_regression() {
  const auto t0 = std::chrono::steady_clock::now();
  train::RegressConfig base;  // two hidden layers of 40, N = 40, 20000 tasks
  base.eval_tasks = 1000;
  std::map<std::string, std::map<std::size_t, train::Estimate>> mse;
  for (std::size_t steps : {std::size_t(0), std::size_t(10)}) {
    auto cfg = base;
    cfg.adapt.steps = steps;
    auto model = train::RegressionModel::create(cfg);
    train::regress_meta_train(model, cfg);
    for (std::size_t shot : {5, 10}) mse[steps ? "AMCL" : "MCL"][shot] = train::regress_eval(model, cfg, shot, 77);
  }
  const auto& a = mse["AMCL"];
  const auto& m = mse["MCL"];
  const bool ok = a.at(5).mean <= 0.20 && a.at(10).mean <= 0.08 && a.at(5).mean <= m.at(5).mean &&
                  a.at(10).mean <= m.at(10).mean;
  return {ok, fmt("AMCL 5-shot %.4f+-%.4f (<= 0.20), 10-shot %.4f+-%.4f (<= 0.08); MCL %.4f / %.4f; %.0fs",
                  a.at(5).mean, a.at(5).ci95, a.at(10).mean, a.at(10).ci95, m.at(5).mean, m.at(10).mean,
                  seconds_since(t0))};
}

// ---------------------------------------------------------------- 2

Tensor<double> random_tensor(diff::Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

// Keeps every entry at least `gap` away from zero (kinks of relu / max).
Tensor<double> away_from_zero(diff::Shape shape, Rng& rng, double gap) {
  Tensor<double> t = random_tensor(std::move(shape), rng);
  for (auto& v : t.data()) v = v < 0 ? v - gap : v + gap;
  return t;
}

Verdict gradient_suite() {
  using namespace mcl::diff;
  const auto t0 = std::chrono::steady_clock::now();
  constexpr double kTol = 1e-3, h = 1e-3;
  Rng rng = stream(2, "gradient-suite");
  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& name, const ScalarFn<double>& f, std::vector<Tensor<double>*> pts) {
    errs.emplace_back(name, grad_check<double>(f, pts, h));
  };

  Tensor<double> a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), c = random_tensor({3, 4}, rng);
  Tensor<double> bias = random_tensor({4}, rng);
  Tensor<double> kinked = away_from_zero({3, 4}, rng, 0.05);
  Tensor<double> weights = random_tensor({3, 4}, rng);
  weights.set_requires_grad(false);
  Tensor<double> img = random_tensor({2, 2, 4, 4}, rng), kw = random_tensor({3, 18}, rng), kb = random_tensor({3}, rng);
  Tensor<double> probe = random_tensor({2, 3, 4, 4}, rng);
  probe.set_requires_grad(false);
  // Distinct pooled values, separated by more than 2h, so every window has a clear max.
  Tensor<double> pool_in({2, 2, 4, 4});
  {
    std::vector<double> vals(pool_in.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.02 * double(i);
    for (std::size_t i = vals.size() - 1; i > 0; --i) std::swap(vals[i], vals[uniform_index(rng, i + 1)]);
    std::copy(vals.begin(), vals.end(), pool_in.data().begin());
    pool_in.set_requires_grad(true);
  }
  Tensor<double> mean = random_tensor({3, 2}, rng), ls = random_tensor({2}, rng, -0.5, 0.5);
  Tensor<double> act = random_tensor({3, 2}, rng);
  act.set_requires_grad(false);
  Tensor<double> clamp_in = away_from_zero({3, 4}, rng, 0.0);
  for (auto& v : clamp_in.data())
    if (std::abs(std::abs(v) - 0.5) < 0.05) v += 0.1;
  Tensor<double> u = random_tensor({5}, rng), v = random_tensor({5}, rng);
  Tensor<double> sq = random_tensor({3, 3}, rng);
  sq.set_requires_grad(false);

  check("matmul", [&](Tape<double>& t) { return sum_squares(matmul(t.param(a), t.param(b))); }, {&a, &b});
  check("transpose", [&](Tape<double>& t) { return sum(mul(transpose(t.param(a)), transpose(t.constant(weights)))); }, {&a});
  check("reshape", [&](Tape<double>& t) { return sum_squares(reshape(t.param(a), {6, 2})); }, {&a});
  check("add", [&](Tape<double>& t) { return sum_squares(add(t.param(a), t.param(c))); }, {&a, &c});
  check("sub", [&](Tape<double>& t) { return sum_squares(sub(t.param(a), t.param(c))); }, {&a, &c});
  check("mul", [&](Tape<double>& t) { return sum_squares(mul(t.param(a), t.param(c))); }, {&a, &c});
  check("scale", [&](Tape<double>& t) { return sum_squares(scale(t.param(a), 0.7)); }, {&a});
  check("add_row_bias", [&](Tape<double>& t) { return sum_squares(add_row_bias(t.param(a), t.param(bias))); }, {&a, &bias});
  check("relu", [&](Tape<double>& t) { return sum(mul(relu(t.param(kinked)), t.constant(weights))); }, {&kinked});
  check("clamp", [&](Tape<double>& t) { return sum_squares(clamp(t.param(clamp_in), -0.5, 0.5)); }, {&clamp_in});
  check("mask_offdiag", [&](Tape<double>& t) { return sum_squares(mask_offdiag(matmul(t.param(a), transpose(t.param(c))))); }, {&a, &c});
  check("sum", [&](Tape<double>& t) { return sum(mul(t.param(a), t.param(c))); }, {&a, &c});
  check("sum_squares", [&](Tape<double>& t) { return sum_squares(t.param(a)); }, {&a});
  check("mean_rows", [&](Tape<double>& t) { return sum_squares(mean_rows(t.param(a))); }, {&a});
  check("max_rows", [&](Tape<double>& t) { return sum_squares(max_rows(reshape(t.param(pool_in), {8, 8}))); }, {&pool_in});
  check("min_rows", [&](Tape<double>& t) { return sum_squares(min_rows(reshape(t.param(pool_in), {8, 8}))); }, {&pool_in});
  check("gather_rows", [&](Tape<double>& t) { return sum_squares(gather_rows(t.param(a), {2, 0, 2})); }, {&a});
  check("stack", [&](Tape<double>& t) { return sum_squares(stack<double>({mean_rows(t.param(a)), mean_rows(t.param(c))})); }, {&a, &c});
  check("cosine", [&](Tape<double>& t) { return cosine(t.param(u), t.param(v)); }, {&u, &v});
  check("normalize_rows", [&](Tape<double>& t) { return sum(mul(normalize_rows(t.param(a)), t.constant(weights))); }, {&a});
  check("sq_distances", [&](Tape<double>& t) { return sum(mul(sq_distances(t.param(a), t.param(c)), t.constant(sq))); }, {&a, &c});
  check("cross_entropy", [&](Tape<double>& t) { return cross_entropy(t.param(a), {1, 3, 0}); }, {&a});
  check("mse", [&](Tape<double>& t) { return mse(t.param(a), t.param(c)); }, {&a, &c});
  check("gaussian_log_prob", [&](Tape<double>& t) { return weighted_mean(gaussian_log_prob(t.param(mean), t.param(ls), act), {0.2, -1.0, 0.7}); }, {&mean, &ls});
  check("weighted_mean", [&](Tape<double>& t) { return weighted_mean(reshape(t.param(a), {12}), std::vector<double>(12, 0.3)); }, {&a});
  check("conv2d", [&](Tape<double>& t) { return sum(mul(conv2d(t.param(img), t.param(kw), t.param(kb)), t.constant(probe))); }, {&img, &kw, &kb});
  check("maxpool2", [&](Tape<double>& t) { return sum_squares(maxpool2(t.param(pool_in))); }, {&pool_in});

  Tensor<double> e = random_tensor({5, 4}, rng);
  check("ortho_reg", [&](Tape<double>& t) { return ortho_reg(t.param(e)); }, {&e});

  // MCL episode loss, 2-way 1-shot, on a small vector pool through an MLP encoder.
  {
    std::vector<float> values;
    std::vector<std::uint16_t> labels;
    Rng prng = stream(2, "gradient-pool");
    for (std::uint16_t cls = 0; cls < 2; ++cls)
      for (int i = 0; i < 4; ++i) {
        labels.push_back(cls);
        for (int k = 0; k < 3; ++k) values.push_back(static_cast<float>(normal(prng, cls ? 1.0 : -1.0, 0.5)));
      }
    const auto pool = tasks::LabeledPool::vectors(3, values, labels);
    train::TrainConfig cfg;
    cfg.way = 2;
    cfg.shot = 1;
    cfg.query = 2;
    cfg.component_count = 4;
    Rng mrng = stream(2, "gradient-mlp");
    auto model = train::ClassifierModel::create(
        std::make_unique<tasks::Mlp>(std::vector<std::size_t>{3, 5}, false, mrng, "enc"), cfg);
    Rng erng = stream(2, "gradient-episode");
    const auto ep = tasks::sample_episode(pool, 2, 1, 2, erng);
    std::vector<Tensor<float>*> pts;
    for (auto& p : model.params()) pts.push_back(p.tensor);
    errs.emplace_back("mcl_episode_loss", grad_check<float>(
                                              [&](Tape<float>& t) { return train::mcl_episode_loss(t, ep, pool, model, cfg).loss; },
                                              pts, h));
  }
  // Regression pipeline loss; the fixture keeps ReLU inputs clear of the kink.
  {
    double err = -1;
    for (std::uint64_t seed = 0; seed < 500 && err < 0; ++seed) {
      train::RegressConfig cfg;
      cfg.hidden = 6;
      cfg.component_count = 5;
      cfg.seed = seed;
      auto m = train::RegressionModel::create(cfg);
      Rng trng(seed);
      auto task = tasks::sample_sinusoid_task(trng);
      auto s = tasks::sample_points(task, 4, trng), q = tasks::sample_points(task, 3, trng);
      auto margin = [](tasks::Mlp& net, const Tensor<float>& in) {
        double worst = 1e9;
        auto ps = net.params();
        Tensor<float> hcur = in.detached();
        for (std::size_t l = 0; l + 2 < ps.size(); l += 2) {
          Tape<float> t2;
          auto z = add_row_bias(matmul(t2.constant(hcur), t2.constant(ps[l].tensor->detached())),
                                t2.constant(ps[l + 1].tensor->detached()))
                       .value();
          for (float x : z.data()) worst = std::min(worst, std::abs(double(x)));
          for (auto& x : z.data()) x = std::max(x, 0.0f);
          hcur = z;
        }
        return worst;
      };
      if (margin(m.context, train::detail::pairs(s)) < 0.05 || margin(m.body, train::detail::column(s.x)) < 0.05 ||
          margin(m.body, train::detail::column(q.x)) < 0.05)
        continue;
      std::vector<Tensor<float>*> pts;
      for (auto& p : m.params()) pts.push_back(p.tensor);
      err = grad_check<float>([&](Tape<float>& t) { return train::regress_task_loss(t, m, s, q, 0.5, AdaptConfig{0.01, 0}).loss; }, pts, h);
    }
    errs.emplace_back("regression_loss", err < 0 ? 1.0 : err);
  }

  double worst = 0;
  std::string worst_name;
  for (const auto& [n, x] : errs)
    if (x >= worst) {
      worst = x;
      worst_name = n;
    }
  const double secs = seconds_since(t0);
  std::string failed;
  for (const auto& [n, x] : errs)
    if (!(x < kTol)) failed += " " + n;
  return {failed.empty() && secs <= 60,
          fmt("%zu checks, worst relative error %.2e (%s)%s%s; %.1fs", errs.size(), worst, worst_name.c_str(),
              failed.empty() ? "" : ", failing:", failed.c_str(), secs)};
}

// ---------------------------------------------------------------- 3

tasks::LabeledPool small_shapes(std::uint64_t seed) { return tasks::gen_shapes_dataset(10, seed).relabeled(tasks::LabelKind::Shape); }

train::ClassifierModel small_conv_model(const train::TrainConfig& cfg) {
  Rng rng = stream(cfg.seed, "init-backbone");
  return train::ClassifierModel::create(std::make_unique<tasks::ConvEncoder>(4, 16, rng), cfg);
}

bool same_params(train::ClassifierModel& a, train::ClassifierModel& b) {
  auto pa = a.params(), pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!pa[i].tensor->same_bits(*pb[i].tensor)) return false;
  return true;
}

bool same_rows(const train::MetricsLog& a, const train::MetricsLog& b) {
  if (a.rows().size() != b.rows().size()) return false;
  for (std::size_t i = 0; i < a.rows().size(); ++i) {
    const auto &x = a.rows()[i], &y = b.rows()[i];
    if (x.step != y.step || x.metric != y.metric || std::memcmp(&x.value, &y.value, sizeof(double)) != 0) return false;
  }
  return true;
}

Verdict mcl_amcl_identity() {
  const auto pool = small_shapes(3);
  train::TrainConfig cfg;
  cfg.episodes = 500;
  cfg.eval_episodes = 100;
  cfg.log_every = 50;
  cfg.seed = 3;
  auto mcl = cfg;
  mcl.adapt = {0.1, 0};
  auto amcl = cfg;
  amcl.adapt = {0.37, 0};  // alpha is irrelevant at M = 0
  auto m1 = small_conv_model(mcl), m2 = small_conv_model(amcl);
  train::MetricsLog l1, l2;
  train::meta_train(pool, m1, mcl, &l1);
  train::meta_train(pool, m2, amcl, &l2);
  const auto e1 = train::evaluate_classification(pool, m1, mcl), e2 = train::evaluate_classification(pool, m2, amcl);
  const bool ok = same_params(m1, m2) && same_rows(l1, l2) && std::memcmp(&e1.mean, &e2.mean, sizeof(double)) == 0;
  return {ok, fmt("500 episodes: parameters %s, %zu metric rows %s, eval accuracy %.4f vs %.4f",
                  same_params(m1, m2) ? "bit-identical" : "DIFFER", l1.rows().size(),
                  same_rows(l1, l2) ? "bit-identical" : "DIFFER", e1.mean, e2.mean)};
}

// ---------------------------------------------------------------- 4-7

struct ShapesRun {
  double beta0_acc = 0, beta5_acc = 0, n16_acc = 0;
  double beta0_ortho = 0, beta5_ortho = 0;
  double mcl_color = 0, amcl_color = 0, proto_color = 0;
  double probe_min = 0, probe_absmax = 0;
  double secs = 0;
};

train::TrainConfig shapes_config(std::uint64_t seed) {
  train::TrainConfig cfg;
  cfg.episodes = 10000;
  cfg.meta_lr = 0.01;
  cfg.logit_scale = 3.0;
  cfg.backbone_scale = 0.0;  // meta-train on top of the frozen pre-trained backbone
  cfg.eval_episodes = 1000;
  cfg.seed = seed;
  return cfg;
}

ShapesRun shapes_seed(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  ShapesRun r;
  const auto pool = tasks::gen_shapes_dataset(100, seed);
  const auto eval_pool = tasks::gen_shapes_dataset(100, seed + 1000);
  const auto shapes = pool.relabeled(tasks::LabelKind::Shape);
  const auto shapes_eval = eval_pool.relabeled(tasks::LabelKind::Shape);
  const auto colors_eval = eval_pool.relabeled(tasks::LabelKind::Color);

  Rng rng = stream(seed, "init-backbone");
  tasks::ConvEncoder backbone(32, 64, rng);
  train::pretrain_backbone(pool, backbone, {15, 16, 0.05, seed});

  auto run = [&](double beta, std::size_t n, std::size_t steps, const tasks::LabeledPool& train_pool) {
    auto cfg = shapes_config(seed);
    cfg.beta = beta;
    cfg.component_count = n;
    cfg.adapt.steps = steps;
    auto model = train::ClassifierModel::create(backbone.clone(), cfg);
    auto summary = train::meta_train(train_pool, model, cfg);
    return std::make_tuple(std::move(model), summary, cfg);
  };

  {
    auto [m0, s0, c0] = run(0.0, 64, 0, shapes);
    r.beta0_acc = train::evaluate_classification(shapes_eval, m0, c0).mean;
    r.beta0_ortho = s0.final_ortho;
  }
  {
    auto [m5, s5, c5] = run(0.5, 64, 0, shapes);
    r.beta5_acc = train::evaluate_classification(shapes_eval, m5, c5).mean;
    r.beta5_ortho = s5.final_ortho;
    r.mcl_color = train::evaluate_classification(colors_eval, m5, c5).mean;
    r.proto_color = train::evaluate_protonet(colors_eval, backbone, c5).mean;
  }
  {
    auto [m16, s16, c16] = run(0.5, 16, 0, shapes);
    r.n16_acc = train::evaluate_classification(shapes_eval, m16, c16).mean;
  }
  {
    auto [ma, sa, ca] = run(0.5, 64, 10, shapes);
    r.amcl_color = train::evaluate_classification(colors_eval, ma, ca).mean;
  }
  {
    // Probe: 11 components meta-trained on the (shape, color) classes.
    auto [mp, sp, cp] = run(0.5, 11, 0, pool);
    const auto corr = train::pearson_probe(pool, mp);
    r.probe_min = 1;
    for (std::size_t att = 0; att < corr.rows(); ++att) {
      double best = 0;
      for (std::size_t k = 0; k < corr.cols(); ++k) {
        best = std::max(best, std::abs(double(corr.at(att, k))));
        r.probe_absmax = std::max(r.probe_absmax, std::abs(double(corr.at(att, k))));
      }
      r.probe_min = std::min(r.probe_min, best);
    }
  }
  r.secs = seconds_since(t0);
  std::printf("  shapes seed %llu: beta0 %.4f (R %.3f) beta0.5 %.4f (R %.4f) N16 %.4f | color MCL %.4f AMCL %.4f "
              "protonet %.4f | probe min max|r| %.3f | %.0fs\n",
              static_cast<unsigned long long>(seed), r.beta0_acc, r.beta0_ortho, r.beta5_acc, r.beta5_ortho, r.n16_acc,
              r.mcl_color, r.amcl_color, r.proto_color, r.probe_min, r.secs);
  std::fflush(stdout);
  return r;
}

std::vector<ShapesRun>& shapes_runs() {
  static std::vector<ShapesRun> runs = [] {
    std::vector<ShapesRun> out;
    for (auto s : kSeeds) out.push_back(shapes_seed(s));
    return out;
  }();
  return runs;
}

template <class F>
std::vector<double> collect(F f) {
  std::vector<double> v;
  for (const auto& r : shapes_runs()) v.push_back(f(r));
  return v;
}

Verdict orthogonality() {
  bool ortho_lower = true;
  for (const auto& r : shapes_runs()) ortho_lower = ortho_lower && r.beta5_ortho < r.beta0_ortho;
  const double a0 = mean_of(collect([](auto& r) { return r.beta0_acc; }));
  const double a5 = mean_of(collect([](auto& r) { return r.beta5_acc; }));
  const double secs = mean_of(collect([](auto& r) { return r.secs; }));
  return {ortho_lower && a5 >= a0 - 0.01,
          fmt("(a) R(E) beta=0.5 below beta=0 on %s seeds; (b) accuracy beta=0.5 %.4f vs beta=0 %.4f (needs >= %.4f); "
              "~%.0fs per seed for all shapes runs",
              ortho_lower ? "all" : "NOT all", a5, a0, a0 - 0.01, secs)};
}

Verdict component_count() {
  const double a64 = mean_of(collect([](auto& r) { return r.beta5_acc; }));
  const double a16 = mean_of(collect([](auto& r) { return r.n16_acc; }));
  return {a64 >= a16, fmt("accuracy N=64 %.4f vs N=16 %.4f (beta=0.5, 3 seeds paired)", a64, a16)};
}

Verdict transfer() {
  const double mcl = mean_of(collect([](auto& r) { return r.mcl_color; }));
  const double amcl = mean_of(collect([](auto& r) { return r.amcl_color; }));
  const double proto = mean_of(collect([](auto& r) { return r.proto_color; }));
  const double best = std::max(mcl, amcl);
  return {best - proto >= 0.03,
          fmt("color 5-way 1-shot after shape meta-training: MCL %.4f, AMCL %.4f, frozen ProtoNet %.4f (margin %+.4f, "
              "needs >= +0.03)",
              mcl, amcl, proto, best - proto)};
}

Verdict pearson() {
  const auto mins = collect([](auto& r) { return r.probe_min; });
  const auto maxes = collect([](auto& r) { return r.probe_absmax; });
  const double absmax = *std::max_element(maxes.begin(), maxes.end());
  const double worst = *std::min_element(mins.begin(), mins.end());
  return {worst >= 0.4 && absmax <= 1.0,
          fmt("weakest attribute max|r| per seed %.3f / %.3f / %.3f (needs >= 0.4); all |r| <= %.3f", mins[0], mins[1],
              mins[2], absmax)};
}

// ---------------------------------------------------------------- 8

Verdict navigation() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> before, after, dist;
  for (auto seed : kSeeds) {
    rl::RlConfig cfg;
    cfg.seed = seed;
    auto model = rl::RlModel::create(cfg);
    const auto u = rl::rl_eval(model, cfg, seed + 500);
    rl::rl_meta_train(model, cfg);
    const auto t = rl::rl_eval(model, cfg, seed + 500);
    before.push_back(u.mean_return.mean);
    after.push_back(t.mean_return.mean);
    dist.push_back(t.final_distance.mean);
    std::printf("  navigation seed %llu: return %.2f -> %.2f, final distance %.3f\n",
                static_cast<unsigned long long>(seed), u.mean_return.mean, t.mean_return.mean, t.final_distance.mean);
    std::fflush(stdout);
  }
  const double b = mean_of(before), a = mean_of(after), d = mean_of(dist);
  const double improvement = (a - b) / std::abs(b);
  const double secs = seconds_since(t0);
  return {improvement >= 0.5 && d < 0.2 && secs <= 1800,
          fmt("mean return %.2f -> %.2f (%.0f%% better, needs >= 50%%), final distance %.3f (needs < 0.2); %.0fs", b,
              a, 100 * improvement, d, secs)};
}

// ---------------------------------------------------------------- 9

Verdict determinism() {
  std::vector<std::string> notes;
  bool ok = true;
  auto note = [&](bool cond, const std::string& what) {
    ok = ok && cond;
    if (!cond) notes.push_back(what);
  };
  const auto dir = std::filesystem::temp_directory_path() / "mcl_acceptance";
  std::filesystem::create_directories(dir);

  // Classification, AMCL, trainable backbone.
  const auto pool = small_shapes(9);
  train::TrainConfig cfg;
  cfg.episodes = 150;
  cfg.eval_episodes = 200;
  cfg.log_every = 25;
  cfg.adapt = {0.1, 3};
  cfg.seed = 9;
  auto a = small_conv_model(cfg), b = small_conv_model(cfg);
  train::MetricsLog la, lb;
  train::meta_train(pool, a, cfg, &la);
  train::meta_train(pool, b, cfg, &lb);
  note(same_params(a, b) && same_rows(la, lb), "classifier rerun differs");

  auto par = cfg;
  par.workers = 4;
  const auto s1 = train::evaluate_classification(pool, a, cfg), s4 = train::evaluate_classification(pool, a, par);
  note(std::memcmp(&s1.mean, &s4.mean, sizeof(double)) == 0 && std::memcmp(&s1.ci95, &s4.ci95, sizeof(double)) == 0,
       "classification eval depends on workers");

  const auto ck = (dir / "classifier.json").string();
  io::save_checkpoint(ck, a.params(), cfg.episodes, "x");
  auto fresh = small_conv_model([&] {
    auto c = cfg;
    c.seed = 10;
    return c;
  }());
  io::restore(io::load_checkpoint(ck), fresh.params());
  note(same_params(a, fresh), "classifier checkpoint round trip");

  // Regression.
  train::RegressConfig rc;
  rc.tasks = 300;
  rc.eval_tasks = 100;
  rc.adapt.steps = 5;
  auto ra = train::RegressionModel::create(rc), rb = train::RegressionModel::create(rc);
  train::regress_meta_train(ra, rc);
  train::regress_meta_train(rb, rc);
  auto pa = ra.params(), pb = rb.params();
  bool same = true;
  for (std::size_t i = 0; i < pa.size(); ++i) same = same && pa[i].tensor->same_bits(*pb[i].tensor);
  note(same, "regression rerun differs");
  auto rc4 = rc;
  rc4.workers = 4;
  const auto m1 = train::regress_eval(ra, rc, 5, 1), m4 = train::regress_eval(ra, rc4, 5, 1);
  note(std::memcmp(&m1.mean, &m4.mean, sizeof(double)) == 0, "regression eval depends on workers");
  const auto rck = (dir / "regress.json").string();
  io::save_checkpoint(rck, ra.params(), 1, "x");
  auto rc2 = rc;
  rc2.seed = 5;
  auto rfresh = train::RegressionModel::create(rc2);
  io::restore(io::load_checkpoint(rck), rfresh.params());
  const auto mr = train::regress_eval(rfresh, rc, 5, 1);
  note(std::memcmp(&m1.mean, &mr.mean, sizeof(double)) == 0, "regression checkpoint round trip");

  // Navigation.
  rl::RlConfig nc;
  nc.hidden = 16;
  nc.context_hidden = 16;
  nc.component_count = 8;
  nc.iterations = 3;
  nc.tasks_per_iter = 3;
  nc.eval_tasks = 6;
  nc.adapt.steps = 2;
  auto na = rl::RlModel::create(nc), nb = rl::RlModel::create(nc);
  const auto ca = rl::rl_meta_train(na, nc), cb = rl::rl_meta_train(nb, nc);
  bool same_curve = ca.size() == cb.size();
  for (std::size_t i = 0; same_curve && i < ca.size(); ++i)
    same_curve = std::memcmp(&ca[i].mean_return.mean, &cb[i].mean_return.mean, sizeof(double)) == 0;
  note(same_curve, "navigation rerun differs");
  auto nc4 = nc;
  nc4.workers = 4;
  const auto e1 = rl::rl_eval(na, nc, 3), e4 = rl::rl_eval(na, nc4, 3);
  note(std::memcmp(&e1.mean_return.mean, &e4.mean_return.mean, sizeof(double)) == 0, "navigation eval depends on workers");

  return {ok, notes.empty() ? "reruns bitwise identical (classifier, regression, navigation); checkpoints restore "
                              "bit-exactly; 4-worker evaluation equals serial bitwise"
                            : "failed: " + [&] {
                                std::string s;
                                for (auto& n : notes) s += n + "; ";
                                return s;
                              }()};
}

// ---------------------------------------------------------------- 10

double head_time(std::size_t n, std::size_t d, std::size_t ways) {
  Rng rng(n);
  Tensor<float> e({n, d}), p({ways, d});
  for (auto& v : e.data()) v = static_cast<float>(normal(rng));
  for (auto& v : p.data()) v = static_cast<float>(normal(rng));
  std::vector<double> samples;
  for (int rep = 0; rep < 31; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int k = 0; k < 20; ++k) {
      Tape<float> t;
      auto ev = t.constant(e);
      auto w = build_head(ev, score_matrix(t.constant(p), ev));
      if (w.shape()[0] != d) std::abort();
    }
    samples.push_back(seconds_since(t0));
  }
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

Verdict complexity() {
  const std::size_t d = 128, ways = 5;
  head_time(512, d, ways);  // warm-up
  std::vector<std::string> parts;
  bool ok = true;
  for (std::size_t n : {512, 1024, 2048}) {
    const double ratio = head_time(2 * n, d, ways) / head_time(n, d, ways);
    ok = ok && ratio >= 1.5 && ratio <= 3.0;
    parts.push_back(fmt("N=%zu->%zu ratio %.2f", n, 2 * n, ratio));
  }
  std::string s;
  for (auto& p : parts) s += (s.empty() ? "" : ", ") + p;
  return {ok, s + fmt(" (d=%zu, N_c=%zu; needs [1.5, 3.0])", d, ways)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"sinusoid regression", sinusoid_regression},
      {"gradient suite", gradient_suite},
      {"MCL/AMCL identity at M=0", mcl_amcl_identity},
      {"orthogonality regularizer", orthogonality},
      {"component-count trend", component_count},
      {"shape-to-color transfer", transfer},
      {"Pearson probe", pearson},
      {"2D navigation", navigation},
      {"determinism and persistence", determinism},
      {"complexity scaling", complexity},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::printf("criterion %2d %s: %s | %s\n", id, v.pass ? "PASS" : "FAIL", criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
