// SPDX-License-Identifier: Apache-2.0
#include "lava/train/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include "lava/errors.hpp"

namespace lava::train {

namespace {

constexpr Stage kStages[] = {Stage::Synth, Stage::Pretrain, Stage::Adapt, Stage::Transfer,
                             Stage::Eval, Stage::Episodes, Stage::Analyze};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("invalid value '" + std::string(v) + "' for " + std::string(key));
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean '" + std::string(v) + "' for " + std::string(key));
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field number(std::string key, T RunConfig::*member) {
  return {key, [key, member](RunConfig& c, std::string_view v) { c.*member = parse_number<T>(key, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <class T>
Field nested(std::string key, std::function<T&(RunConfig&)> ref) {
  return {key,
          [key, ref](RunConfig& c, std::string_view v) {
            if constexpr (std::is_same_v<T, bool>) ref(c) = parse_bool(key, v);
            else ref(c) = parse_number<T>(key, v);
          },
          [ref](const RunConfig& c) {
            const T& x = ref(const_cast<RunConfig&>(c));
            if constexpr (std::is_same_v<T, bool>) return std::string(x ? "true" : "false");
            else if constexpr (std::is_floating_point_v<T>) return fmt_double(x);
            else return std::to_string(x);
          }};
}

Field text(std::string key, std::string RunConfig::*member) {
  return {key, [member](RunConfig& c, std::string_view v) { c.*member = std::string(v); },
          [member](const RunConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back({"stage", [](RunConfig& c, std::string_view s) {
                   if (parse_stage(s) != c.stage)
                     throw ConfigError("config is for stage '" + std::string(s) + "', not '" + to_string(c.stage) + "'");
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.stage)); }});
    v.push_back(number("seed", &RunConfig::seed));
    v.push_back(text("out", &RunConfig::out));
    v.push_back(text("data.root", &RunConfig::data_root));
    v.push_back(text("data.source_root", &RunConfig::source_root));
    v.push_back(number("data.shots", &RunConfig::shots));
    v.push_back(text("embeddings.path", &RunConfig::embeddings));
    v.push_back(text("checkpoint.init", &RunConfig::init_checkpoint));

    v.push_back(nested<int>("model.channels", [](RunConfig& c) -> int& { return c.arch.channels; }));
    v.push_back(nested<int>("model.conv_channels", [](RunConfig& c) -> int& { return c.arch.conv_channels; }));
    v.push_back(nested<int>("model.patch", [](RunConfig& c) -> int& { return c.arch.patch; }));
    v.push_back(nested<int>("model.feature_dim", [](RunConfig& c) -> int& { return c.arch.feature_dim; }));
    v.push_back(nested<int>("model.hidden_dim", [](RunConfig& c) -> int& { return c.arch.hidden_dim; }));
    v.push_back(nested<int>("model.projection_dim", [](RunConfig& c) -> int& { return c.arch.projection_dim; }));
    v.push_back(nested<int>("model.semantic_dim", [](RunConfig& c) -> int& { return c.arch.semantic_dim; }));
    v.push_back(nested<int>("model.ssl_dim", [](RunConfig& c) -> int& { return c.arch.ssl_dim; }));

    v.push_back(number("epochs", &RunConfig::epochs));
    v.push_back(number("optim.batch_size", &RunConfig::batch_size));
    v.push_back(number("optim.labelled_batch", &RunConfig::labelled_batch));
    v.push_back(number("optim.lr", &RunConfig::lr));
    v.push_back(number("optim.lr_min", &RunConfig::lr_min));
    v.push_back(number("optim.warmup_epochs", &RunConfig::warmup_epochs));
    v.push_back(number("optim.weight_decay_start", &RunConfig::weight_decay_start));
    v.push_back(number("optim.weight_decay_end", &RunConfig::weight_decay_end));
    v.push_back(number("optim.clip", &RunConfig::clip));
    v.push_back(number("pretrain.semantic_epochs", &RunConfig::semantic_epochs));
    v.push_back(number("pretrain.semantic_lr", &RunConfig::semantic_lr));

    v.push_back(nested<int>("crops.n_small_student", [](RunConfig& c) -> int& { return c.crops.n_small_student; }));
    v.push_back(nested<int>("crops.n_small_teacher", [](RunConfig& c) -> int& { return c.crops.n_small_teacher; }));
    v.push_back(nested<int>("crops.n_large_student", [](RunConfig& c) -> int& { return c.crops.n_large_student; }));
    v.push_back(nested<int>("crops.n_large_teacher", [](RunConfig& c) -> int& { return c.crops.n_large_teacher; }));
    v.push_back(nested<double>("crops.global_scale_min", [](RunConfig& c) -> double& { return c.crops.global_scale.lo; }));
    v.push_back(nested<double>("crops.global_scale_max", [](RunConfig& c) -> double& { return c.crops.global_scale.hi; }));
    v.push_back(nested<double>("crops.local_scale_min", [](RunConfig& c) -> double& { return c.crops.local_scale.lo; }));
    v.push_back(nested<double>("crops.local_scale_max", [](RunConfig& c) -> double& { return c.crops.local_scale.hi; }));
    v.push_back(nested<int>("crops.large_size", [](RunConfig& c) -> int& { return c.crops.large_out_size; }));
    v.push_back(nested<int>("crops.small_size", [](RunConfig& c) -> int& { return c.crops.small_out_size; }));
    v.push_back(nested<bool>("crops.flip", [](RunConfig& c) -> bool& { return c.crops.augment.flip; }));
    v.push_back(nested<bool>("crops.color_jitter", [](RunConfig& c) -> bool& { return c.crops.augment.color_jitter; }));
    v.push_back(nested<bool>("crops.blur", [](RunConfig& c) -> bool& { return c.crops.augment.blur; }));
    v.push_back(nested<bool>("crops.solarize", [](RunConfig& c) -> bool& { return c.crops.augment.solarize; }));
    v.push_back(nested<bool>("crops.share_large", [](RunConfig& c) -> bool& { return c.crops.share_large_crops; }));

    v.push_back(nested<double>("loss.w_ssl", [](RunConfig& c) -> double& { return c.weights.ssl; }));
    v.push_back(nested<double>("loss.w_sem", [](RunConfig& c) -> double& { return c.weights.sem; }));
    v.push_back(nested<double>("loss.w_pl", [](RunConfig& c) -> double& { return c.weights.pl; }));
    v.push_back(nested<double>("loss.w_cls", [](RunConfig& c) -> double& { return c.weights.cls; }));
    v.push_back(number("loss.eta", &RunConfig::eta));
    v.push_back({"loss.strategy",
                 [](RunConfig& c, std::string_view s) { c.strategy = loss::parse_strategy(s); },
                 [](const RunConfig& c) { return std::string(loss::to_string(c.strategy)); }});
    v.push_back(number("temp.student", &RunConfig::tau_student));
    v.push_back(number("temp.teacher", &RunConfig::tau_teacher));
    v.push_back(number("temp.teacher_warmup_start", &RunConfig::tau_teacher_warmup_start));
    v.push_back(number("temp.teacher_warmup_epochs", &RunConfig::tau_teacher_warmup_epochs));
    v.push_back(number("momentum.start", &RunConfig::momentum_start));
    v.push_back(number("momentum.end", &RunConfig::momentum_end));

    v.push_back(number("eval.k", &RunConfig::knn_k));
    v.push_back(text("eval.knn_bank", &RunConfig::knn_bank));
    v.push_back(text("eval.head", &RunConfig::eval_head));
    v.push_back(nested<bool>("eval.record_crops", [](RunConfig& c) -> bool& { return c.record_crops; }));

    v.push_back(number("episodes.n", &RunConfig::n_episodes));
    v.push_back(number("episodes.min_ways", &RunConfig::min_ways));
    v.push_back(number("episodes.max_ways", &RunConfig::max_ways));
    v.push_back(number("episodes.min_shots", &RunConfig::min_shots));
    v.push_back(number("episodes.max_shots", &RunConfig::max_shots));
    v.push_back(number("episodes.queries_per_class", &RunConfig::queries_per_class));
    v.push_back(number("episodes.finetune_epochs", &RunConfig::finetune_epochs));
    v.push_back(number("episodes.finetune_lr", &RunConfig::finetune_lr));
    v.push_back(number("episodes.ci_multiplier", &RunConfig::ci_multiplier));

    v.push_back(text("analyze.crop_log", &RunConfig::crop_log));
    v.push_back(number("analyze.collapse_k", &RunConfig::collapse_k));
    v.push_back(number("analyze.collapse_queries", &RunConfig::collapse_queries));
    v.push_back(number("analyze.iterations", &RunConfig::analyze_iterations));

    v.push_back(number("synth.classes", &RunConfig::synth_classes));
    v.push_back(number("synth.per_class", &RunConfig::synth_per_class));
    v.push_back(number("synth.dual_fraction", &RunConfig::synth_dual_fraction));
    v.push_back(number("synth.validation_per_class", &RunConfig::synth_validation_per_class));
    v.push_back(text("synth.style", &RunConfig::synth_style));
    v.push_back(number("synth.vocab_seed", &RunConfig::synth_vocab_seed));
    v.push_back(number("synth.noise", &RunConfig::synth_noise));
    v.push_back(number("synth.embed_dim", &RunConfig::synth_embed_dim));
    v.push_back(number("synth.siblings", &RunConfig::synth_siblings));
    v.push_back(number("synth.sibling_angle", &RunConfig::synth_sibling_angle));
    v.push_back(number("synth.heldout_per_class", &RunConfig::synth_heldout_per_class));
    return v;
  }();
  return f;
}

}  // namespace

const char* to_string(Stage s) {
  switch (s) {
    case Stage::Synth: return "synth";
    case Stage::Pretrain: return "pretrain";
    case Stage::Adapt: return "adapt";
    case Stage::Transfer: return "transfer";
    case Stage::Eval: return "eval";
    case Stage::Episodes: return "episodes";
    case Stage::Analyze: return "analyze";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  for (Stage st : kStages)
    if (s == to_string(st)) return st;
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

RunConfig defaults_for(Stage stage) {
  RunConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::Pretrain:
    case Stage::Adapt:
      c.epochs = stage == Stage::Pretrain ? 100 : 50;
      c.lr = 5e-4;
      c.warmup_epochs = stage == Stage::Pretrain ? 10 : 0;
      c.crops.n_small_student = 8;
      c.crops.n_small_teacher = 0;
      c.crops.share_large_crops = true;
      c.weights = {1, 0, 0, 0};
      c.tau_teacher = 0.07;
      c.tau_teacher_warmup_start = 0.04;
      c.tau_teacher_warmup_epochs = stage == Stage::Pretrain ? 30 : 0;
      c.momentum_start = stage == Stage::Pretrain ? 0.996 : 0.95;
      c.labelled_batch = stage == Stage::Pretrain ? 32 : 0;
      break;
    case Stage::Transfer:
    case Stage::Eval:
    case Stage::Episodes:
    case Stage::Analyze:
    case Stage::Synth:
      break;
  }
  return c;
}

void RunConfig::validate() const {
  arch.validate();
  crops.validate();
  weights.validate();
  if (!(tau_student > 0.0) || !(tau_teacher > 0.0) || !(tau_teacher_warmup_start > 0.0))
    throw ConfigError("temperatures must be positive");
  if (!(eta > 0.0)) throw ConfigError("loss.eta must be positive");
  if (momentum_start < 0.0 || momentum_start > 1.0 || momentum_end < 0.0 || momentum_end > 1.0)
    throw ConfigError("momentum must lie in [0, 1]");
  if (epochs < 0 || semantic_epochs < 0 || warmup_epochs < 0 || tau_teacher_warmup_epochs < 0)
    throw ConfigError("epoch counts must be non-negative");
  if (batch_size < 1 || labelled_batch < 0) throw ConfigError("batch sizes must be positive");
  if (lr < 0.0 || lr_min < 0.0 || semantic_lr < 0.0 || finetune_lr < 0.0) throw ConfigError("learning rates must be non-negative");
  if (knn_k < 1 || collapse_k < 1) throw ConfigError("K must be at least 1");
  if (knn_bank != "labelled" && knn_bank != "all_train") throw ConfigError("eval.knn_bank must be labelled or all_train");
  if (eval_head != "auto" && eval_head != "softmax" && eval_head != "semantic")
    throw ConfigError("eval.head must be auto, softmax or semantic");
  if (synth_style != "source" && synth_style != "target") throw ConfigError("synth.style must be source or target");
  if (n_episodes < 2) throw ConfigError("episodes.n must be at least 2");

  auto need = [&](const std::string& v, const char* key) {
    if (v.empty()) throw ConfigError(std::string(key) + " is required for stage " + to_string(stage));
  };
  switch (stage) {
    case Stage::Synth:
      break;
    case Stage::Pretrain:
      need(data_root, "data.root");
      if (semantic_epochs > 0) need(embeddings, "embeddings.path");
      break;
    case Stage::Adapt:
      need(data_root, "data.root");
      need(init_checkpoint, "checkpoint.init");
      break;
    case Stage::Transfer:
      need(data_root, "data.root");
      if (weights.sem > 0.0) need(embeddings, "embeddings.path");
      break;
    case Stage::Eval:
    case Stage::Episodes:
    case Stage::Analyze:
      need(data_root, "data.root");
      need(init_checkpoint, "checkpoint.init");
      break;
  }
}

void set_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : fields())
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void apply_config(RunConfig& cfg, std::istream& in, std::string_view origin) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    try {
      set_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  apply_config(cfg, in, path.string());
}

void write_config(const RunConfig& cfg, std::ostream& out) {
  for (const auto& f : fields()) out << f.key << " = " << f.get(cfg) << '\n';
}

std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.push_back(f.key);
  return k;
}

RunConfig load_run_config(Stage stage, const std::filesystem::path& path) {
  RunConfig cfg = defaults_for(stage);
  apply_config_file(cfg, path);
  return cfg;
}

}  // namespace lava::train
