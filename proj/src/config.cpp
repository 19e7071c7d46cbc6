#include "infoscc/config.hpp"

#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>

extern char** environ;

namespace infoscc {

namespace fs = std::filesystem;

namespace {

struct Field {
  std::function<void(const YAML::Node&)> set;
  std::function<Json()> get;
};

using Section = std::map<std::string, Field>;
using Schema = std::map<std::string, Section>;

template <typename T>
Field bind(T& field) {
  return {[&field](const YAML::Node& n) { field = n.as<T>(); }, [&field] { return Json(field); }};
}

Field bind_path(fs::path& field, const fs::path& base) {
  return {[&field, base](const YAML::Node& n) {
            fs::path p = n.as<std::string>();
            field = p.is_absolute() || base.empty() ? p : (base / p).lexically_normal();
          },
          [&field] { return Json(field.string()); }};
}

template <typename E>
Field bind_enum(E& field, E (*parse)(const std::string&)) {
  return {[&field, parse](const YAML::Node& n) { field = parse(n.as<std::string>()); },
          [&field] { return Json(to_string(field)); }};
}

// The single source of truth for which keys exist. Fields are bound by
// reference into `c`, so the schema must not outlive it.
Schema schema(PipelineConfig& c, const fs::path& base) {
  Schema s;
  s[""] = {{"output_dir", bind_path(c.output_dir, base)}, {"seed", bind(c.seed)}};

  auto& d = c.dataset;
  s["dataset"] = {{"root", bind_path(d.root, base)},
                  {"image_size", bind(d.image_size)},
                  {"channels", bind(d.channels)},
                  {"label_kind", bind_enum(d.label_kind, &label_kind_from_string)},
                  {"attributes", bind(d.attributes)},
                  {"split", bind(d.split)}};

  if (c.synthetic) {
    s["synthetic"] = {{"count", bind(c.synthetic->count)}, {"classes", bind(c.synthetic->classes)}};
  }

  auto& a = c.encoder.augmentation;
  s["augmentation"] = {{"crop_scale_min", bind(a.crop_scale_min)},
                       {"crop_scale_max", bind(a.crop_scale_max)},
                       {"crop_ratio_min", bind(a.crop_ratio_min)},
                       {"crop_ratio_max", bind(a.crop_ratio_max)},
                       {"flip_probability", bind(a.flip_probability)},
                       {"jitter_probability", bind(a.jitter_probability)},
                       {"brightness", bind(a.brightness)},
                       {"contrast", bind(a.contrast)},
                       {"saturation", bind(a.saturation)},
                       {"hue", bind(a.hue)},
                       {"grayscale_probability", bind(a.grayscale_probability)},
                       {"blur_probability", bind(a.blur_probability)}};

  auto& e = c.encoder;
  s["encoder"] = {{"widths", bind(e.arch.widths)},
                  {"blocks_per_stage", bind(e.arch.blocks_per_stage)},
                  {"embedding_dim", bind(e.arch.embedding_dim)},
                  {"projection_hidden", bind(e.arch.projection_hidden)},
                  {"projection_dim", bind(e.arch.projection_dim)},
                  {"temperature", bind(e.temperature)},
                  {"batch_size", bind(e.batch_size)},
                  {"epochs", bind(e.epochs)},
                  {"learning_rate", bind(e.optimizer.learning_rate)},
                  {"beta1", bind(e.optimizer.beta1)},
                  {"beta2", bind(e.optimizer.beta2)},
                  {"cosine_decay", bind(e.cosine_decay)}};

  auto& k = c.classifier;
  s["classifier"] = {{"hidden", bind(k.hidden)},
                     {"epochs", bind(k.epochs)},
                     {"batch_size", bind(k.batch_size)},
                     {"learning_rate", bind(k.optimizer.learning_rate)},
                     {"balance_classes", bind(k.balance_classes)},
                     {"shuffle_labels", bind(k.shuffle_labels)}};

  auto& t = c.train;
  s["generator"] = {{"label_dim", bind(t.label_dim)},
                    {"noise_dim", bind(t.noise_dim)},
                    {"cond_dim", bind(t.cond_dim)},
                    {"base_size", bind(t.base_size)},
                    {"subspace_dims", bind(t.subspace_dims)},
                    {"base_width", bind(t.g_base_width)},
                    {"min_width", bind(t.g_min_width)}};

  s["train"] = {{"discriminator", bind_enum(t.discriminator, &discriminator_kind_from_string)},
                {"d_base_width", bind(t.d_base_width)},
                {"conditional_discriminator", bind(t.conditional_discriminator)},
                {"conditional", bind(t.conditional)},
                {"loss", bind_enum(t.loss, &loss_kind_from_string)},
                {"iterations", bind(t.iterations)},
                {"batch_size", bind(t.batch_size)},
                {"regularization_period", bind(t.regularization_period)},
                {"lambda_cls", bind(t.lambda_cls)},
                {"lambda_orth", bind(t.lambda_orth)},
                {"g_learning_rate", bind(t.g_optimizer.learning_rate)},
                {"d_learning_rate", bind(t.d_optimizer.learning_rate)},
                {"beta1",
                 {[&t](const YAML::Node& n) { t.g_optimizer.beta1 = t.d_optimizer.beta1 = n.as<double>(); },
                  [&t] { return Json(t.g_optimizer.beta1); }}},
                {"beta2",
                 {[&t](const YAML::Node& n) { t.g_optimizer.beta2 = t.d_optimizer.beta2 = n.as<double>(); },
                  [&t] { return Json(t.g_optimizer.beta2); }}},
                {"eval_every", bind(t.eval_every)},
                {"checkpoint_every", bind(t.checkpoint_every)},
                {"eval_samples", bind(t.eval_samples)}};

  auto& m = c.metrics;
  s["metrics"] = {{"samples", bind(m.samples)},
                  {"attribute_samples", bind(m.attribute_samples)},
                  {"chamfer_samples", bind(m.chamfer_samples)},
                  {"is_splits", bind(m.is_splits)},
                  {"tsne_perplexity", bind(m.tsne.perplexity)},
                  {"tsne_iterations", bind(m.tsne.iterations)}};

  s["service"] = {{"host", bind(c.service.host)}, {"port", bind(c.service.port)}, {"cors", bind(c.service.cors)}};
  s["ablation"] = {{"iterations", bind(c.ablation.iterations)}};
  return s;
}

void assign(Field& f, const YAML::Node& value, const std::string& where) {
  try {
    f.set(value);
  } catch (const YAML::Exception& e) {
    throw ConfigError(where + ": " + e.msg);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return char(std::toupper(ch)); });
  return s;
}

}  // namespace

void PipelineConfig::apply_seed(std::uint64_t s) {
  seed = s;
  dataset.seed = s;
  encoder.seed = s;
  classifier.seed = s;
  train.seed = s;
  metrics.seed = s;
  metrics.tsne.seed = s;
}

void PipelineConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("output_dir must be set");
  dataset.validate();
  if (synthetic) {
    if (synthetic->classes < 2 || synthetic->classes > kSyntheticShapes) {
      throw ConfigError("synthetic.classes must be in [2, " + std::to_string(kSyntheticShapes) + "]");
    }
    if (synthetic->count < 2 * synthetic->classes) throw ConfigError("synthetic.count is too small");
    if (dataset.label_kind != LabelKind::categorical) {
      throw ConfigError("synthetic datasets are categorical");
    }
  }
  encoder.validate();
  classifier.validate();
  train.validate();
  if (metrics.samples < 2 || metrics.attribute_samples < 1 || metrics.chamfer_samples < 10 || metrics.is_splits < 1) {
    throw ConfigError("metrics: samples >= 2, attribute_samples >= 1, chamfer_samples >= 10, is_splits >= 1");
  }
  if (service.port < 0 || service.port > 65535) throw ConfigError("service.port out of range");
  if (ablation.iterations < 1) throw ConfigError("ablation.iterations must be >= 1");
}

Environment infoscc_environment() {
  Environment env;
  for (char** e = environ; e && *e; ++e) {
    std::string entry = *e;
    const auto eq = entry.find('=');
    if (eq == std::string::npos || !entry.starts_with("INFOSCC_")) continue;
    env.emplace(entry.substr(0, eq), entry.substr(eq + 1));
  }
  return env;
}

PipelineConfig parse_config(const std::string& yaml, const fs::path& base_dir, const Environment& env) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::Exception& e) {
    throw ConfigError("config is not valid YAML: " + e.msg);
  }
  if (!root.IsNull() && !root.IsMap()) throw ConfigError("config must be a mapping of sections");

  PipelineConfig cfg;
  const bool synthetic_env = std::any_of(env.begin(), env.end(),
                                         [](const auto& kv) { return kv.first.starts_with("INFOSCC_SYNTHETIC_"); });
  if ((root.IsMap() && root["synthetic"]) || synthetic_env) cfg.synthetic.emplace();
  Schema s = schema(cfg, base_dir);

  if (root.IsMap()) {
    for (const auto& kv : root) {
      const auto key = kv.first.as<std::string>();
      if (auto top = s[""].find(key); top != s[""].end()) {
        assign(top->second, kv.second, key);
        continue;
      }
      auto sec = s.find(key);
      if (sec == s.end() || key.empty()) throw ConfigError("unknown config section '" + key + "'");
      if (kv.second.IsNull()) continue;
      if (!kv.second.IsMap()) throw ConfigError("section '" + key + "' must be a mapping");
      for (const auto& field : kv.second) {
        const auto name = field.first.as<std::string>();
        auto f = sec->second.find(name);
        if (f == sec->second.end()) throw ConfigError("unknown key '" + key + "." + name + "'");
        assign(f->second, field.second, key + "." + name);
      }
    }
  }

  for (const auto& [var, value] : env) {
    if (!var.starts_with("INFOSCC_")) continue;
    const std::string rest = var.substr(8);
    Field* target = nullptr;
    std::string where;
    for (auto& [section, fields] : s) {
      const std::string prefix = section.empty() ? "" : upper(section) + "_";
      if (!rest.starts_with(prefix)) continue;
      for (auto& [name, f] : fields) {
        if (rest == prefix + upper(name)) {
          target = &f;
          where = section.empty() ? name : section + "." + name;
        }
      }
    }
    if (!target) {
      spdlog::debug("ignoring environment variable {}", var);
      continue;
    }
    YAML::Node node;
    try {
      node = YAML::Load(value);
    } catch (const YAML::Exception& e) {
      throw ConfigError(var + ": " + e.msg);
    }
    assign(*target, node, var);
  }

  cfg.apply_seed(cfg.seed);
  cfg.encoder.arch.image_size = cfg.dataset.image_size;
  cfg.encoder.arch.channels = cfg.dataset.channels;
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const fs::path& path, const Environment& env) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), fs::absolute(path).parent_path(), env);
}

Json config_to_json(const PipelineConfig& cfg) {
  PipelineConfig copy = cfg;
  Schema s = schema(copy, {});
  Json out = Json::object();
  for (auto& [section, fields] : s) {
    Json& dst = section.empty() ? out : out[section];
    if (!section.empty()) dst = Json::object();
    for (auto& [name, f] : fields) dst[name] = f.get();
  }
  return out;
}

}  // namespace infoscc
