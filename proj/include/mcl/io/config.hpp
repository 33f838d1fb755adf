#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mcl/error.hpp"
#include "mcl/navrl.hpp"
#include "mcl/tasks/pool.hpp"
#include "mcl/train.hpp"

namespace mcl::io {

using Value = std::variant<bool, std::int64_t, double, std::string>;

/// Settings that are not owned by one training engine.
struct TaskSettings {
  std::size_t per_class = 100;           // gen-shapes items per (shape, color) class
  std::string train_labels = "shape";    // shape | color | combined
  std::string eval_labels = "shape";
  std::string pretrain_labels = "combined";
  std::size_t embed_dim = 64;
  std::size_t conv_width = 32;
  bool pretrain = true;
  train::PretrainConfig pretrain_cfg;
  std::size_t top_k = 8;
};

struct RunConfig {
  TaskSettings task;
  train::TrainConfig train;
  train::RegressConfig regress;
  rl::RlConfig rl;

  void validate() const;
  void set_seed(std::uint64_t seed) {
    train.seed = regress.seed = rl.seed = task.pretrain_cfg.seed = seed;
  }
  void set_workers(std::size_t w) { train.workers = regress.workers = rl.workers = w; }
};

inline tasks::LabelKind parse_label_kind(const std::string& s) {
  if (s == "shape") return tasks::LabelKind::Shape;
  if (s == "color") return tasks::LabelKind::Color;
  if (s == "combined") return tasks::LabelKind::Combined;
  throw ConfigError("unknown label kind '" + s + "' (expected shape, color or combined)");
}

inline const char* set_function_name(SetFunction f) {
  switch (f) {
    case SetFunction::Max: return "max";
    case SetFunction::Min: return "min";
    case SetFunction::Mean: break;
  }
  return "mean";
}

inline void RunConfig::validate() const {
  parse_label_kind(task.train_labels);
  parse_label_kind(task.eval_labels);
  parse_label_kind(task.pretrain_labels);
  if (task.per_class == 0) throw ConfigError("task.per_class must be >= 1");
  if (task.conv_width == 0) throw ConfigError("model.conv_width must be >= 1");
  if (task.embed_dim == 0 || task.embed_dim % 4 != 0) throw ConfigError("model.embed_dim must be a positive multiple of 4");
  task.pretrain_cfg.validate();
  train.validate();
  regress.validate();
  rl.validate();
}

namespace detail {

struct Field {
  std::string section, key;
  std::function<void(const Value&)> set;
  std::function<Value()> get;
};

inline std::string where(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

inline Field size_field(std::string section, std::string key, std::size_t* p) {
  auto name = where(section, key);
  return {section, key,
          [p, name](const Value& v) {
            const auto* i = std::get_if<std::int64_t>(&v);
            if (!i || *i < 0) throw ConfigError(name + " must be a non-negative integer");
            *p = static_cast<std::size_t>(*i);
          },
          [p] { return Value(static_cast<std::int64_t>(*p)); }};
}

inline Field seed_field(std::string section, std::string key, std::uint64_t* p) {
  auto name = where(section, key);
  return {section, key,
          [p, name](const Value& v) {
            const auto* i = std::get_if<std::int64_t>(&v);
            if (!i || *i < 0) throw ConfigError(name + " must be a non-negative integer");
            *p = static_cast<std::uint64_t>(*i);
          },
          [p] { return Value(static_cast<std::int64_t>(*p)); }};
}

inline Field real_field(std::string section, std::string key, double* p) {
  auto name = where(section, key);
  return {section, key,
          [p, name](const Value& v) {
            if (const auto* d = std::get_if<double>(&v)) *p = *d;
            else if (const auto* i = std::get_if<std::int64_t>(&v)) *p = double(*i);
            else throw ConfigError(name + " must be a number");
          },
          [p] { return Value(*p); }};
}

inline Field bool_field(std::string section, std::string key, bool* p) {
  auto name = where(section, key);
  return {section, key,
          [p, name](const Value& v) {
            const auto* b = std::get_if<bool>(&v);
            if (!b) throw ConfigError(name + " must be true or false");
            *p = *b;
          },
          [p] { return Value(*p); }};
}

inline Field string_field(std::string section, std::string key, std::string* p) {
  auto name = where(section, key);
  return {section, key,
          [p, name](const Value& v) {
            const auto* s = std::get_if<std::string>(&v);
            if (!s) throw ConfigError(name + " must be a string");
            *p = *s;
          },
          [p] { return Value(*p); }};
}

inline std::vector<Field> fields(RunConfig& c) {
  auto& t = c.train;
  auto& r = c.regress;
  auto& l = c.rl;
  std::vector<Field> f = {
      size_field("task", "way", &t.way),
      size_field("task", "shot", &t.shot),
      size_field("task", "query", &t.query),
      size_field("task", "eval_episodes", &t.eval_episodes),
      size_field("task", "per_class", &c.task.per_class),
      string_field("task", "train_labels", &c.task.train_labels),
      string_field("task", "eval_labels", &c.task.eval_labels),
      string_field("task", "pretrain_labels", &c.task.pretrain_labels),
      size_field("task", "regress_shot", &r.shot),
      size_field("task", "regress_query", &r.query),
      size_field("task", "regress_eval_tasks", &r.eval_tasks),

      size_field("model", "embed_dim", &c.task.embed_dim),
      size_field("model", "conv_width", &c.task.conv_width),
      size_field("model", "component_count", &t.component_count),
      real_field("model", "logit_scale", &t.logit_scale),
      {"model", "set_function",
       [&t](const Value& v) {
         const auto* s = std::get_if<std::string>(&v);
         if (!s) throw ConfigError("[model] set_function must be a string");
         t.set_function = parse_set_function(*s);
       },
       [&t] { return Value(std::string(set_function_name(t.set_function))); }},
      size_field("model", "top_k", &c.task.top_k),
      size_field("model", "regress_hidden", &r.hidden),
      size_field("model", "regress_components", &r.component_count),

      size_field("train", "episodes", &t.episodes),
      real_field("train", "beta", &t.beta),
      real_field("train", "meta_lr", &t.meta_lr),
      real_field("train", "backbone_scale", &t.backbone_scale),
      {"train", "seed",
       [&c](const Value& v) {
         std::uint64_t s = 0;
         seed_field("train", "seed", &s).set(v);
         c.set_seed(s);
       },
       [&t] { return Value(static_cast<std::int64_t>(t.seed)); }},
      size_field("train", "log_every", &t.log_every),
      size_field("train", "checkpoint_every", &t.checkpoint_every),
      {"train", "workers",
       [&c](const Value& v) {
         std::size_t w = 0;
         size_field("train", "workers", &w).set(v);
         c.set_workers(w);
       },
       [&t] { return Value(static_cast<std::int64_t>(t.workers)); }},
      bool_field("train", "pretrain", &c.task.pretrain),
      size_field("train", "pretrain_epochs", &c.task.pretrain_cfg.epochs),
      size_field("train", "pretrain_batch", &c.task.pretrain_cfg.batch),
      real_field("train", "pretrain_lr", &c.task.pretrain_cfg.lr),
      size_field("train", "regress_tasks", &r.tasks),
      size_field("train", "regress_meta_batch", &r.meta_batch),
      real_field("train", "regress_lr", &r.lr),
      real_field("train", "regress_beta", &r.beta),
      size_field("train", "regress_log_every", &r.log_every),

      real_field("adapt", "alpha", &t.adapt.alpha),
      size_field("adapt", "steps", &t.adapt.steps),
      real_field("adapt", "regress_alpha", &r.adapt.alpha),
      size_field("adapt", "regress_steps", &r.adapt.steps),

      size_field("rl", "hidden", &l.hidden),
      size_field("rl", "context_hidden", &l.context_hidden),
      size_field("rl", "component_count", &l.component_count),
      size_field("rl", "support_rollouts", &l.support_rollouts),
      size_field("rl", "query_rollouts", &l.query_rollouts),
      size_field("rl", "eval_query_rollouts", &l.eval_query_rollouts),
      size_field("rl", "eval_tasks", &l.eval_tasks),
      size_field("rl", "horizon", &l.horizon),
      real_field("rl", "gamma", &l.gamma),
      real_field("rl", "lr", &l.lr),
      real_field("rl", "beta", &l.beta),
      real_field("rl", "adapt_alpha", &l.adapt.alpha),
      size_field("rl", "adapt_steps", &l.adapt.steps),
      size_field("rl", "iterations", &l.iterations),
      size_field("rl", "tasks_per_iter", &l.tasks_per_iter),
  };
  return f;
}

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline Value parse_value(const std::string& text, const std::string& ctx) {
  if (text.empty()) throw ConfigError(ctx + ": missing value");
  if (text == "true") return true;
  if (text == "false") return false;
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"') throw ConfigError(ctx + ": unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
      if (text[i] == '\\') {
        if (i + 2 >= text.size()) throw ConfigError(ctx + ": dangling escape");
        const char e = text[++i];
        if (e == 'n') out += '\n';
        else if (e == 't') out += '\t';
        else if (e == '"' || e == '\\') out += e;
        else throw ConfigError(ctx + ": unsupported escape \\" + std::string(1, e));
      } else if (text[i] == '"') {
        throw ConfigError(ctx + ": unexpected quote inside string");
      } else {
        out += text[i];
      }
    }
    return out;
  }
  if (text.front() == '[') throw ConfigError(ctx + ": arrays are not supported");
  std::string digits;
  for (char ch : text)
    if (ch != '_') digits += ch;
  const bool is_int = digits.find_first_of(".eE") == std::string::npos && digits != "inf" && digits != "nan" &&
                      digits.find("inf") == std::string::npos && digits.find("nan") == std::string::npos;
  std::size_t used = 0;
  try {
    if (is_int) {
      const long long v = std::stoll(digits, &used, 10);
      if (used == digits.size()) return static_cast<std::int64_t>(v);
    } else {
      const double v = std::stod(digits, &used);
      if (used == digits.size()) return v;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(ctx + ": cannot parse value '" + text + "'");
}

// Drops a trailing comment, ignoring '#' inside a quoted string.
inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && quoted) {
      ++i;
      continue;
    }
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

}  // namespace detail

inline const std::vector<std::string>& config_sections() {
  static const std::vector<std::string> s = {"task", "model", "train", "adapt", "rl"};
  return s;
}

/// section -> key -> value, as written in the document.
using Document = std::map<std::string, std::map<std::string, Value>>;

/// Parses the TOML subset used for run configs: [section] headers, one
/// `key = value` per line, values bool / integer / float / "string", and
/// `#` comments. Anything else is a config error that names the line.
inline Document parse_config_text(const std::string& text, const std::string& origin = "config") {
  Document doc;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string ctx = origin + ":" + std::to_string(line_no);
    const std::string line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(ctx + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      const auto& known = config_sections();
      if (std::find(known.begin(), known.end(), section) == known.end())
        throw ConfigError(ctx + ": unknown section [" + section + "]");
      doc[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(ctx + ": expected key = value");
    if (section.empty()) throw ConfigError(ctx + ": key outside of any section");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(ctx + ": empty key");
    for (char ch : key)
      if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-')
        throw ConfigError(ctx + ": invalid key '" + key + "'");
    auto& sec = doc[section];
    if (sec.count(key)) throw ConfigError(ctx + ": duplicate key '" + key + "'");
    sec[key] = detail::parse_value(detail::trim(line.substr(eq + 1)), ctx);
  }
  return doc;
}

/// Applies a parsed document over `cfg`; unknown keys are rejected.
inline void apply_document(const Document& doc, RunConfig& cfg) {
  auto fs = detail::fields(cfg);
  for (const auto& [section, keys] : doc)
    for (const auto& [key, value] : keys) {
      auto it = std::find_if(fs.begin(), fs.end(), [&](const auto& f) { return f.section == section && f.key == key; });
      if (it == fs.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
      it->set(value);
    }
}

inline RunConfig parse_config(const std::string& text, const std::string& origin = "config") {
  RunConfig cfg;
  apply_document(parse_config_text(text, origin), cfg);
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path);
}

/// Every field of the resolved config, grouped by section.
inline nlohmann::json to_json(const RunConfig& cfg) {
  RunConfig copy = cfg;
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : detail::fields(copy)) {
    auto& slot = j[f.section][f.key];
    std::visit([&](const auto& v) { slot = v; }, f.get());
  }
  return j;
}

inline RunConfig from_json(const nlohmann::json& j) {
  Document doc;
  if (!j.is_object()) throw ConfigError("config JSON must be an object");
  for (const auto& [section, keys] : j.items()) {
    if (!keys.is_object()) throw ConfigError("config JSON section '" + section + "' must be an object");
    for (const auto& [key, v] : keys.items()) {
      Value val;
      if (v.is_boolean()) val = v.get<bool>();
      else if (v.is_number_integer()) val = v.get<std::int64_t>();
      else if (v.is_number()) val = v.get<double>();
      else if (v.is_string()) val = v.get<std::string>();
      else throw ConfigError("config JSON value for " + section + "." + key + " has an unsupported type");
      doc[section][key] = val;
    }
  }
  RunConfig cfg;
  apply_document(doc, cfg);
  cfg.validate();
  return cfg;
}

/// Renders the resolved config as a document `parse_config` reads back
/// to the same values.
inline std::string to_toml(const RunConfig& cfg) {
  RunConfig copy = cfg;
  const auto fs = detail::fields(copy);
  std::ostringstream os;
  for (const auto& section : config_sections()) {
    os << '[' << section << "]\n";
    for (const auto& f : fs) {
      if (f.section != section) continue;
      os << f.key << " = ";
      const Value v = f.get();
      if (const auto* b = std::get_if<bool>(&v)) {
        os << (*b ? "true" : "false");
      } else if (const auto* i = std::get_if<std::int64_t>(&v)) {
        os << *i;
      } else if (const auto* d = std::get_if<double>(&v)) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", *d);
        std::string t = buf;
        if (t.find_first_of(".eEn") == std::string::npos) t += ".0";
        os << t;
      } else {
        os << '"';
        for (char ch : std::get<std::string>(v)) {
          if (ch == '"' || ch == '\\') os << '\\';
          if (ch == '\n') os << "\\n";
          else if (ch == '\t') os << "\\t";
          else os << ch;
        }
        os << '"';
      }
      os << '\n';
    }
    os << '\n';
  }
  return os.str();
}

/// Stable 64-bit hash of the resolved config.
inline std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(cfg).dump())));
  return buf;
}

}  // namespace mcl::io
