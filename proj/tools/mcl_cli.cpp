// mcl: command-line driver for the shapes, sinusoid and navigation experiments.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcl/io.hpp"
#include "mcl/navrl.hpp"
#include "mcl/tasks.hpp"
#include "mcl/train.hpp"

namespace fs = std::filesystem;
using namespace mcl;
using io::RunConfig;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4 };

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string config;
  std::string out_dir = ".";
};

struct Flags {
  std::optional<std::size_t> adapt_steps;
  std::optional<std::size_t> per_class;
  std::optional<std::size_t> shot;
  std::string out, pool, backbone, model, param;
  std::vector<double> values;
  bool protonet = false;
};

std::string out_path(const Globals& g, const std::string& name) { return (fs::path(g.out_dir) / name).string(); }

tasks::LabeledPool load_pool(const std::string& path) {
  if (path.empty()) throw ConfigError("--pool is required");
  return tasks::load_image_pool(path);
}

std::unique_ptr<tasks::ConvEncoder> fresh_encoder(const RunConfig& cfg) {
  Rng rng = stream(cfg.train.seed, "init-backbone");
  return std::make_unique<tasks::ConvEncoder>(cfg.task.conv_width, cfg.task.embed_dim, rng);
}

nlohmann::json checkpoint_meta(const std::string& kind, const RunConfig& cfg) {
  return {{"kind", kind}, {"config", io::to_json(cfg)}};
}

io::Checkpoint load_kind(const std::string& path, const std::string& kind) {
  auto ck = io::load_checkpoint(path);
  const std::string found = ck.meta.value("kind", std::string());
  if (found != kind) throw FormatError(path + " holds a '" + found + "' checkpoint, expected '" + kind + "'", 0);
  return ck;
}

// Backbone from --backbone, else pre-trained in process (or left random).
std::unique_ptr<tasks::ConvEncoder> backbone_for(const RunConfig& cfg, const Flags& f, const tasks::LabeledPool& pool,
                                                 const std::string& cfg_hash) {
  auto enc = fresh_encoder(cfg);
  if (!f.backbone.empty()) {
    const auto ck = load_kind(f.backbone, "backbone");
    io::check_config_hash(ck, cfg_hash);
    io::restore(ck, enc->params());
  } else if (cfg.task.pretrain) {
    const auto view = pool.relabeled(io::parse_label_kind(cfg.task.pretrain_labels));
    const auto r = train::pretrain_backbone(view, *enc, cfg.task.pretrain_cfg);
    log::info("pretrained backbone: train accuracy %.4f", r.train_accuracy);
  }
  return enc;
}

train::ClassifierModel classifier_from(const std::string& path, const std::string& cfg_hash) {
  const auto ck = load_kind(path, "classifier");
  io::check_config_hash(ck, cfg_hash);
  // Architecture comes from the checkpoint's own config.
  const RunConfig stored = io::from_json(ck.meta.at("config"));
  auto model = train::ClassifierModel::create(fresh_encoder(stored), stored.train);
  io::restore(ck, model.params());
  return model;
}

nlohmann::json estimate_json(const train::Estimate& e) {
  return {{"mean", e.mean}, {"ci95", e.ci95}, {"count", e.count}};
}

nlohmann::json cmd_gen_shapes(const RunConfig& cfg, const Flags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
  const auto pool = tasks::gen_shapes_dataset(cfg.task.per_class, cfg.train.seed);
  tasks::save_image_pool(pool, f.out);
  nlohmann::json shapes = nlohmann::json::array(), colors = nlohmann::json::array();
  for (std::size_t s = 0; s < tasks::kNumShapes; ++s) shapes.push_back(tasks::name(static_cast<tasks::ShapeKind>(s)));
  for (std::size_t c = 0; c < tasks::kNumColors; ++c) colors.push_back(tasks::name(static_cast<tasks::Color>(c)));
  const nlohmann::json splits = {
      {"pool", fs::path(f.out).filename().string()},
      {"items", pool.size()},
      {"meta_train", {{"labels", "shape"}, {"classes", shapes}}},
      {"eval", {{"labels", "color"}, {"classes", colors}}},
  };
  std::ofstream(f.out + ".splits.json") << splits.dump(2) << '\n';
  std::printf("wrote %zu images in %zu classes to %s\n", pool.size(), pool.num_classes(), f.out.c_str());
  return {{"pool", f.out}, {"splits", f.out + ".splits.json"}, {"items", pool.size()}};
}

nlohmann::json cmd_pretrain(const RunConfig& cfg, const Globals& g, const Flags& f) {
  const auto pool = load_pool(f.pool).relabeled(io::parse_label_kind(cfg.task.pretrain_labels));
  auto enc = fresh_encoder(cfg);
  train::MetricsLog metrics(out_path(g, "metrics.csv"));
  const auto r = train::pretrain_backbone(pool, *enc, cfg.task.pretrain_cfg, &metrics);
  const std::string ckpt = f.out.empty() ? out_path(g, "backbone.json") : f.out;
  io::save_checkpoint(ckpt, enc->params(), cfg.task.pretrain_cfg.epochs, io::config_hash(cfg),
                      checkpoint_meta("backbone", cfg));
  std::printf("pretrain: final loss %.4f, train accuracy %.4f\n", r.final_loss, r.train_accuracy);
  return {{"checkpoint", ckpt}, {"train_accuracy", r.train_accuracy}, {"final_loss", r.final_loss}};
}

nlohmann::json cmd_meta_train(const RunConfig& cfg, const Globals& g, const Flags& f) {
  const auto raw = load_pool(f.pool);
  const auto hash = io::config_hash(cfg);
  auto model = train::ClassifierModel::create(backbone_for(cfg, f, raw, hash), cfg.train);
  const auto pool = raw.relabeled(io::parse_label_kind(cfg.task.train_labels));
  const std::string ckpt = f.out.empty() ? out_path(g, "model.json") : f.out;
  const auto meta = checkpoint_meta("classifier", cfg);
  train::MetricsLog metrics(out_path(g, "metrics.csv"));
  const auto summary = train::meta_train(pool, model, cfg.train, &metrics, [&](std::size_t step, auto& m) {
    io::save_checkpoint(ckpt, m.params(), step, hash, meta);
  });
  io::save_checkpoint(ckpt, model.params(), summary.episodes, hash, meta);
  std::printf("meta-train (%s): %zu episodes, final loss %.4f, train accuracy %.4f, R(E) %.4f\n",
              cfg.train.adapt.steps ? "AMCL" : "MCL", summary.episodes, summary.final_loss, summary.final_accuracy,
              summary.final_ortho);
  return {{"checkpoint", ckpt},
          {"metrics", out_path(g, "metrics.csv")},
          {"final_loss", summary.final_loss},
          {"final_accuracy", summary.final_accuracy},
          {"final_ortho", summary.final_ortho}};
}

nlohmann::json cmd_eval(const RunConfig& cfg, const Globals& g, const Flags& f) {
  const auto raw = load_pool(f.pool);
  const auto pool = raw.relabeled(io::parse_label_kind(cfg.task.eval_labels));
  const auto hash = io::config_hash(cfg);
  train::ClassifierModel model;
  if (!f.model.empty()) {
    model = classifier_from(f.model, hash);
  } else {
    RunConfig untrained = cfg;
    untrained.task.pretrain = false;
    model = train::ClassifierModel::create(backbone_for(untrained, f, raw, hash), cfg.train);
  }
  train::MetricsLog metrics(out_path(g, "eval.csv"));
  const auto acc = f.protonet ? train::evaluate_protonet(pool, *model.encoder, cfg.train)
                              : train::evaluate_classification(pool, model, cfg.train);
  const std::string name = f.protonet ? "protonet_accuracy" : "accuracy";
  metrics.add(0, "eval", name, acc.mean, acc.ci95);
  std::printf("%s %zu-way %zu-shot: %.4f +- %.4f over %zu episodes\n", f.protonet ? "protonet" : "eval",
              cfg.train.way, cfg.train.shot, acc.mean, acc.ci95, acc.count);
  return {{name, estimate_json(acc)}, {"metrics", out_path(g, "eval.csv")}};
}

// Trains on the configured support size, evaluates at --shot.
nlohmann::json cmd_regress(const RunConfig& cfg, const Globals& g, const Flags& f) {
  const std::size_t shot = f.shot.value_or(cfg.regress.shot);
  train::RegressionModel model;
  const auto hash = io::config_hash(cfg);
  train::MetricsLog metrics(out_path(g, "metrics.csv"));
  if (!f.model.empty()) {
    const auto ck = load_kind(f.model, "regression");
    io::check_config_hash(ck, hash);
    model = train::RegressionModel::create(io::from_json(ck.meta.at("config")).regress);
    io::restore(ck, model.params());
  } else {
    model = train::RegressionModel::create(cfg.regress);
    train::regress_meta_train(model, cfg.regress, &metrics);
    const std::string ckpt = f.out.empty() ? out_path(g, "regress.json") : f.out;
    io::save_checkpoint(ckpt, model.params(), cfg.regress.tasks / cfg.regress.meta_batch, hash,
                        checkpoint_meta("regression", cfg));
  }
  const auto mse = train::regress_eval(model, cfg.regress, shot, cfg.regress.seed);
  metrics.add(cfg.regress.tasks / cfg.regress.meta_batch, "eval", "mse", mse.mean, mse.ci95);
  std::printf("regress %s %zu-shot: mse %.4f +- %.4f over %zu tasks\n", cfg.regress.adapt.steps ? "AMCL" : "MCL", shot,
              mse.mean, mse.ci95, mse.count);
  return {{"mse", estimate_json(mse)}, {"metrics", out_path(g, "metrics.csv")}};
}

nlohmann::json cmd_rl(const RunConfig& cfg, const Globals& g, const Flags& f) {
  const auto hash = io::config_hash(cfg);
  auto model = rl::RlModel::create(cfg.rl);
  const auto before = rl::rl_eval(model, cfg.rl, cfg.rl.seed);
  if (!f.model.empty()) {
    const auto ck = load_kind(f.model, "rl");
    io::check_config_hash(ck, hash);
    model = rl::RlModel::create(io::from_json(ck.meta.at("config")).rl);
    io::restore(ck, model.params());
  } else {
    train::MetricsLog metrics(out_path(g, "metrics.csv"));
    const auto curve = rl::rl_meta_train(model, cfg.rl, &metrics);
    rl::write_reward_curve(out_path(g, "reward_curve.csv"), curve);
    const std::string ckpt = f.out.empty() ? out_path(g, "rl.json") : f.out;
    io::save_checkpoint(ckpt, model.params(), cfg.rl.iterations, hash, checkpoint_meta("rl", cfg));
  }
  const auto after = rl::rl_eval(model, cfg.rl, cfg.rl.seed);
  rl::write_rl_eval(out_path(g, "rl_eval.csv"), after);
  std::printf("rl: untrained return %.2f (distance %.3f), trained return %.2f +- %.2f (distance %.3f) over %zu tasks\n",
              before.mean_return.mean, before.final_distance.mean, after.mean_return.mean, after.mean_return.ci95,
              after.final_distance.mean, after.tasks.size());
  return {{"untrained_return", estimate_json(before.mean_return)},
          {"return", estimate_json(after.mean_return)},
          {"final_distance", estimate_json(after.final_distance)}};
}

nlohmann::json cmd_probe(const RunConfig& cfg, const Globals& g, const Flags& f) {
  if (f.model.empty()) throw ConfigError("--model is required");
  const auto pool = load_pool(f.pool);
  auto model = classifier_from(f.model, io::config_hash(cfg));
  const auto corr = train::pearson_probe(pool, model);
  {
    std::ofstream out(out_path(g, "probe.csv"));
    out << "attribute";
    for (std::size_t n = 0; n < corr.cols(); ++n) out << ",c" << n;
    out << '\n';
    for (std::size_t a = 0; a < corr.rows(); ++a) {
      out << (a < tasks::kNumShapes ? tasks::name(static_cast<tasks::ShapeKind>(a))
                                    : tasks::name(static_cast<tasks::Color>(a - tasks::kNumShapes)));
      for (std::size_t n = 0; n < corr.cols(); ++n) out << ',' << train::MetricsLog::format(corr.at(a, n));
      out << '\n';
    }
  }
  const auto emb = train::embed_pool(*model.encoder, pool);
  const std::size_t k = std::min(cfg.task.top_k, pool.size());
  std::ofstream out(out_path(g, "top_items.csv"));
  out << "component,rank,item,shape,color\n";
  for (std::size_t n = 0; n < model.bank.count(); ++n) {
    const auto top = train::top_scoring_items(emb, model.bank.E, n, k);
    for (std::size_t r = 0; r < top.size(); ++r)
      out << n << ',' << r << ',' << top[r] << ',' << tasks::name(static_cast<tasks::ShapeKind>(pool.shape_ids()[top[r]]))
          << ',' << tasks::name(static_cast<tasks::Color>(pool.color_ids()[top[r]])) << '\n';
  }
  double min_best = 1;
  for (std::size_t a = 0; a < corr.rows(); ++a) {
    double best = 0;
    for (std::size_t n = 0; n < corr.cols(); ++n) best = std::max(best, std::abs(double(corr.at(a, n))));
    min_best = std::min(min_best, best);
  }
  std::printf("probe: %zu attributes x %zu components, weakest attribute max |r| = %.3f\n", corr.rows(), corr.cols(),
              min_best);
  return {{"probe", out_path(g, "probe.csv")}, {"top_items", out_path(g, "top_items.csv")}, {"min_max_abs_r", min_best}};
}

nlohmann::json cmd_sweep(const RunConfig& cfg, const Globals& g, const Flags& f) {
  const auto param = train::parse_sweep_param(f.param);
  if (f.values.empty()) throw ConfigError("--values needs at least one value");
  const auto raw = load_pool(f.pool);
  auto enc = backbone_for(cfg, f, raw, io::config_hash(cfg));
  const auto train_pool = raw.relabeled(io::parse_label_kind(cfg.task.train_labels));
  const auto eval_pool = raw.relabeled(io::parse_label_kind(cfg.task.eval_labels));
  const auto rows = train::ablation_sweep(param, f.values, cfg.train, train_pool, eval_pool, *enc);
  train::write_sweep_csv(out_path(g, "sweep.csv"), param, rows);
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    std::printf("%s=%g: accuracy %.4f +- %.4f, R(E) %.4f\n", train::name(param), r.value, r.accuracy.mean,
                r.accuracy.ci95, r.final_ortho);
    out.push_back({{"value", r.value}, {"accuracy", estimate_json(r.accuracy)}, {"final_ortho", r.final_ortho}});
  }
  return {{"sweep", out_path(g, "sweep.csv")}, {"rows", out}};
}

// Defaults < config file < command-line flags.
RunConfig resolve(const std::string& command, const Globals& g, const Flags& f) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : io::load_config_or_manifest(g.config);
  if (g.seed) cfg.set_seed(*g.seed);
  if (g.workers) cfg.set_workers(*g.workers);
  if (f.per_class) cfg.task.per_class = *f.per_class;
  if (f.adapt_steps) {
    if (command == "regress") cfg.regress.adapt.steps = *f.adapt_steps;
    else if (command == "rl") cfg.rl.adapt.steps = *f.adapt_steps;
    else cfg.train.adapt.steps = *f.adapt_steps;
  }
  if (f.shot) {
    if (*f.shot != 5 && *f.shot != 10) throw ConfigError("--shot must be 5 or 10");
  }
  cfg.validate();
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Meta-component learning experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  Flags f;
  app.add_option("--seed", g.seed, "Root seed for every random stream");
  app.add_option("--workers", g.workers, "Parallel evaluation workers")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "Config document or run_manifest.json");
  app.add_option("--out-dir", g.out_dir, "Directory for metrics, checkpoints and the run manifest");

  auto* gen = app.add_subcommand("gen-shapes", "Render the shapes pool");
  gen->add_option("--per-class", f.per_class, "Images per (shape, color) class");
  gen->add_option("--out", f.out, "Pool file to write")->required();

  auto* pre = app.add_subcommand("pretrain", "Supervised backbone pre-training");
  pre->add_option("--pool", f.pool, "Pool file")->required();
  pre->add_option("--out", f.out, "Backbone checkpoint");

  auto* meta = app.add_subcommand("meta-train", "Episodic MCL / AMCL training");
  meta->add_option("--pool", f.pool, "Pool file")->required();
  meta->add_option("--backbone", f.backbone, "Backbone checkpoint (else pre-train per config)");
  meta->add_option("--adapt-steps", f.adapt_steps, "Score adaptation steps; 0 is MCL");
  meta->add_option("--out", f.out, "Model checkpoint");

  auto* ev = app.add_subcommand("eval", "Few-shot accuracy with a 95% interval");
  ev->add_option("--pool", f.pool, "Pool file")->required();
  ev->add_option("--model", f.model, "Model checkpoint (untrained when omitted)");
  ev->add_option("--adapt-steps", f.adapt_steps, "Score adaptation steps; 0 is MCL");
  ev->add_flag("--protonet", f.protonet, "Score the nearest-prototype baseline instead");

  auto* reg = app.add_subcommand("regress", "Sinusoid regression train and eval");
  reg->add_option("--shot", f.shot, "Support points per evaluation task (5 or 10)");
  reg->add_option("--adapt-steps", f.adapt_steps, "Score adaptation steps; 0 is MCL");
  reg->add_option("--model", f.model, "Evaluate this checkpoint instead of training");
  reg->add_option("--out", f.out, "Model checkpoint");

  auto* nav = app.add_subcommand("rl", "2D navigation train and eval");
  nav->add_option("--adapt-steps", f.adapt_steps, "Score adaptation steps; 0 is MCL");
  nav->add_option("--model", f.model, "Evaluate this checkpoint instead of training");
  nav->add_option("--out", f.out, "Model checkpoint");

  auto* probe = app.add_subcommand("probe", "Attribute correlation probe and top items");
  probe->add_option("--pool", f.pool, "Pool file")->required();
  probe->add_option("--model", f.model, "Model checkpoint")->required();

  auto* sweep = app.add_subcommand("sweep", "Ablation over beta or the component count");
  sweep->add_option("--pool", f.pool, "Pool file")->required();
  sweep->add_option("--backbone", f.backbone, "Backbone checkpoint (else pre-train per config)");
  sweep->add_option("--param", f.param, "beta | components")->required();
  sweep->add_option("--values", f.values, "Values to try")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const RunConfig cfg = resolve(command, g, f);
    fs::create_directories(g.out_dir);
    io::Stopwatch clock;
    nlohmann::json outputs;
    if (command == "gen-shapes") outputs = cmd_gen_shapes(cfg, f);
    else if (command == "pretrain") outputs = cmd_pretrain(cfg, g, f);
    else if (command == "meta-train") outputs = cmd_meta_train(cfg, g, f);
    else if (command == "eval") outputs = cmd_eval(cfg, g, f);
    else if (command == "regress") outputs = cmd_regress(cfg, g, f);
    else if (command == "rl") outputs = cmd_rl(cfg, g, f);
    else if (command == "probe") outputs = cmd_probe(cfg, g, f);
    else outputs = cmd_sweep(cfg, g, f);
    io::RunManifest rm{command, std::vector<std::string>(argv, argv + argc), cfg, clock.seconds(), outputs};
    io::write_run_manifest(out_path(g, "run_manifest.json"), rm);
    return kOk;
  } catch (const ConfigError& e) {
    log::error("config error: %s", e.what());
    return kConfig;
  } catch (const DivergenceError& e) {
    log::error("diverged: %s", e.what());
    return kDivergence;
  } catch (const diff::NonFiniteError& e) {
    log::error("diverged: %s", e.what());
    return kDivergence;
  } catch (const Error& e) {
    log::error("%s", e.what());
    return kData;
  } catch (const std::exception& e) {
    log::error("%s", e.what());
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
