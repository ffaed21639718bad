#include "stica/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace stica {

Command parse_command(const std::string& name) {
  if (name == "pretrain") return Command::Pretrain;
  if (name == "probe") return Command::Probe;
  if (name == "retrieve") return Command::Retrieve;
  if (name == "bench") return Command::Bench;
  if (name == "heatmap") return Command::Heatmap;
  throw ConfigError("unknown command '" + name + "' (pretrain, probe, retrieve, bench, heatmap)");
}

std::string to_string(Command c) {
  switch (c) {
    case Command::Pretrain: return "pretrain";
    case Command::Probe: return "probe";
    case Command::Retrieve: return "retrieve";
    case Command::Bench: return "bench";
    case Command::Heatmap: return "heatmap";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream in(v);
  for (std::string item; std::getline(in, item, ',');) out.push_back(parse_u64(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Key size_key(const std::string& name, T RunConfig::*field) {
  return {name, [field](const RunConfig& c) { return std::to_string(c.*field); },
          [field, name](RunConfig& c, const std::string& v) { c.*field = static_cast<T>(parse_u64(name, v)); }};
}

Key size_ref(const std::string& name, std::function<std::size_t&(RunConfig&)> ref) {
  return {name, [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_u64(name, v); }};
}

Key double_ref(const std::string& name, std::function<double&(RunConfig&)> ref) {
  return {name, [ref](const RunConfig& c) { return fmt_double(ref(const_cast<RunConfig&>(c))); },
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_double(name, v); }};
}

Key bool_ref(const std::string& name, std::function<bool&(RunConfig&)> ref) {
  return {name, [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_bool(name, v); }};
}

Key string_ref(const std::string& name, std::function<std::string&(RunConfig&)> ref) {
  return {name, [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = v; }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(size_key("seed", &RunConfig::seed));
    k.push_back({"threads", [](const RunConfig& c) { return std::to_string(c.threads); },
                 [](RunConfig& c, const std::string& v) { c.threads = static_cast<int>(parse_u64("threads", v)); }});
    k.push_back(string_ref("out", [](RunConfig& c) -> std::string& { return c.out; }));
    k.push_back(string_ref("checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; }));

    k.push_back(size_ref("data.classes", [](RunConfig& c) -> std::size_t& { return c.data.num_classes; }));
    k.push_back(size_ref("data.per_class", [](RunConfig& c) -> std::size_t& { return c.data.instances_per_class; }));
    k.push_back(size_ref("data.frames", [](RunConfig& c) -> std::size_t& { return c.data.frames; }));
    k.push_back(size_ref("data.height", [](RunConfig& c) -> std::size_t& { return c.data.height; }));
    k.push_back(size_ref("data.width", [](RunConfig& c) -> std::size_t& { return c.data.width; }));
    k.push_back(size_ref("data.freq_bins", [](RunConfig& c) -> std::size_t& { return c.data.freq_bins; }));
    k.push_back(size_ref("data.audio_frames", [](RunConfig& c) -> std::size_t& { return c.data.audio_frames; }));
    k.push_back(size_ref("data.speed", [](RunConfig& c) -> std::size_t& { return c.data.speed; }));
    k.push_back(size_ref("data.blob_radius", [](RunConfig& c) -> std::size_t& { return c.data.blob_radius; }));
    k.push_back(double_ref("data.noise", [](RunConfig& c) -> double& { return c.data.noise; }));
    k.push_back(double_ref("data.train_fraction", [](RunConfig& c) -> double& { return c.data.train_fraction; }));
    k.push_back({"data.seed", [](const RunConfig& c) { return std::to_string(c.data.seed); },
                 [](RunConfig& c, const std::string& v) { c.data.seed = parse_u64("data.seed", v); }});

    k.push_back({"encoder.preset", [](const RunConfig& c) { return c.encoder_preset; },
                 [](RunConfig& c, const std::string& v) {
                   preset_model(v);
                   c.encoder_preset = v;
                 }});
    k.push_back({"model.pooling",
                 [](const RunConfig& c) {
                   return std::string(c.pooling == nn::TemporalPooling::Transformer ? "transformer" : "average");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "transformer") c.pooling = nn::TemporalPooling::Transformer;
                   else if (v == "average") c.pooling = nn::TemporalPooling::Average;
                   else throw ConfigError("model.pooling: expected transformer or average, got '" + v + "'");
                 }});
    k.push_back(size_key("transformer.layers", &RunConfig::transformer_layers));
    k.push_back(size_key("transformer.heads", &RunConfig::transformer_heads));
    k.push_back(size_key("transformer.ff_dim", &RunConfig::transformer_ff));
    k.push_back({"transformer.aggregation",
                 [](const RunConfig& c) { return std::string(c.aggregation == nn::Aggregation::Mean ? "mean" : "summary"); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "mean") c.aggregation = nn::Aggregation::Mean;
                   else if (v == "summary") c.aggregation = nn::Aggregation::SummaryToken;
                   else throw ConfigError("transformer.aggregation: expected mean or summary, got '" + v + "'");
                 }});
    k.push_back(size_key("head.hidden", &RunConfig::head_hidden));
    k.push_back(size_key("head.embed_dim", &RunConfig::embed_dim));

    k.push_back(size_ref("crop.m", [](RunConfig& c) -> std::size_t& { return c.plan.m; }));
    k.push_back(size_ref("crop.n", [](RunConfig& c) -> std::size_t& { return c.plan.n; }));
    k.push_back(size_ref("crop.medium_size", [](RunConfig& c) -> std::size_t& { return c.plan.medium_size; }));
    k.push_back(size_ref("crop.small_size", [](RunConfig& c) -> std::size_t& { return c.plan.small_size; }));
    k.push_back({"crop.time",
                 [](const RunConfig& c) { return c.plan.time.empty() ? std::string("none") : CropPlan::format_time(c.plan.time); },
                 [](RunConfig& c, const std::string& v) { c.plan.time = CropPlan::parse_time(v == "none" ? "" : v); }});
    k.push_back(double_ref("crop.area_min", [](RunConfig& c) -> double& { return c.augment.crop.area_min; }));
    k.push_back(double_ref("crop.area_max", [](RunConfig& c) -> double& { return c.augment.crop.area_max; }));

    k.push_back(double_ref("loss.lambda_vv", [](RunConfig& c) -> double& { return c.weights.lambda_vv; }));
    k.push_back(double_ref("loss.lambda_va", [](RunConfig& c) -> double& { return c.weights.lambda_va; }));
    k.push_back(double_ref("loss.lambda_av", [](RunConfig& c) -> double& { return c.weights.lambda_av; }));
    k.push_back(double_ref("loss.lambda_aa", [](RunConfig& c) -> double& { return c.weights.lambda_aa; }));
    k.push_back(double_ref("loss.tau_cross", [](RunConfig& c) -> double& { return c.weights.tau_cross; }));
    k.push_back(double_ref("loss.tau_within", [](RunConfig& c) -> double& { return c.weights.tau_within; }));
    k.push_back(bool_ref("loss.normalize_within", [](RunConfig& c) -> bool& { return c.weights.normalize_within; }));

    k.push_back(double_ref("augment.flip_prob", [](RunConfig& c) -> double& { return c.augment.photometric.flip_prob; }));
    k.push_back(double_ref("augment.brightness", [](RunConfig& c) -> double& { return c.augment.photometric.brightness; }));
    k.push_back(double_ref("augment.contrast", [](RunConfig& c) -> double& { return c.augment.photometric.contrast; }));
    k.push_back(double_ref("augment.blur_prob", [](RunConfig& c) -> double& { return c.augment.photometric.blur_prob; }));
    k.push_back(double_ref("augment.blur_sigma_max", [](RunConfig& c) -> double& { return c.augment.photometric.blur_sigma_max; }));
    k.push_back(double_ref("augment.audio_gain", [](RunConfig& c) -> double& { return c.augment.audio_gain_jitter; }));

    k.push_back(size_key("train.batch_size", &RunConfig::batch_size));
    k.push_back(size_key("train.epochs", &RunConfig::epochs));
    k.push_back(double_ref("train.base_lr", [](RunConfig& c) -> double& { return c.base_lr; }));
    k.push_back(size_key("train.warmup_epochs", &RunConfig::warmup_epochs));
    k.push_back(double_ref("train.momentum", [](RunConfig& c) -> double& { return c.momentum; }));
    k.push_back(double_ref("train.weight_decay", [](RunConfig& c) -> double& { return c.weight_decay; }));
    k.push_back(size_key("train.checkpoint_every", &RunConfig::checkpoint_every));
    k.push_back(string_ref("train.resume", [](RunConfig& c) -> std::string& { return c.resume; }));

    k.push_back({"probe.mode", [](const RunConfig& c) { return std::string(c.probe_mode == ProbeMode::Linear ? "linear" : "full"); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "linear") c.probe_mode = ProbeMode::Linear;
                   else if (v == "full") c.probe_mode = ProbeMode::Full;
                   else throw ConfigError("probe.mode: expected linear or full, got '" + v + "'");
                 }});
    k.push_back(bool_ref("probe.feature_crops", [](RunConfig& c) -> bool& { return c.probe_feature_crops; }));
    k.push_back(size_key("probe.epochs", &RunConfig::probe_epochs));
    k.push_back(size_key("probe.batch_size", &RunConfig::probe_batch_size));
    k.push_back({"retrieve.ks", [](const RunConfig& c) { return fmt_list(c.retrieve_ks); },
                 [](RunConfig& c, const std::string& v) { c.retrieve_ks = parse_list("retrieve.ks", v); }});
    k.push_back(size_key("eval.num_clips", &RunConfig::num_clips));
    k.push_back(size_key("heatmap.count", &RunConfig::heatmap_count));

    k.push_back({"bench.preset", [](const RunConfig& c) { return c.bench_preset; },
                 [](RunConfig& c, const std::string& v) {
                   preset_model(v);
                   c.bench_preset = v;
                 }});
    k.push_back({"bench.ks", [](const RunConfig& c) { return fmt_list(c.bench_ks); },
                 [](RunConfig& c, const std::string& v) { c.bench_ks = parse_list("bench.ks", v); }});
    k.push_back(size_key("bench.batch_size", &RunConfig::bench_batch_size));
    k.push_back(size_key("bench.repeats", &RunConfig::bench_repeats));
    k.push_back(size_key("bench.warmup", &RunConfig::bench_warmup));
    k.push_back(double_ref("bench.min_step_ms", [](RunConfig& c) -> double& { return c.bench_min_step_ms; }));
    return k;
  }();
  return table;
}

}  // namespace

nn::ModelConfig preset_model(const std::string& preset) {
  if (preset == "desk") return nn::ModelConfig::desk();
  if (preset == "micro") return nn::ModelConfig::micro();
  if (preset == "bench") return bench_model();
  throw ConfigError("encoder preset must be desk, micro or bench, got '" + preset + "'");
}

nn::ModelConfig RunConfig::model_config() const {
  nn::ModelConfig m = preset_model(encoder_preset);
  m.pooling = pooling;
  m.transformer.num_layers = transformer_layers;
  m.transformer.num_heads = transformer_heads;
  m.transformer.ff_dim = transformer_ff;
  m.transformer.model_dim = m.visual.feature_dim();
  m.transformer.aggregation = aggregation;
  m.head_hidden = head_hidden;
  m.embed_dim = embed_dim;
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.data = data;
  t.model = model_config();
  t.plan = plan;
  t.plan.grid = {t.model.visual.out_frames, t.model.visual.out_height, t.model.visual.out_width};
  t.weights = weights;
  t.augment = augment;
  t.batch_size = batch_size;
  t.epochs = epochs;
  t.base_lr = base_lr;
  t.warmup_epochs = warmup_epochs;
  t.momentum = momentum;
  t.weight_decay = weight_decay;
  t.seed = seed;
  t.checkpoint_every = checkpoint_every;
  t.digest_text = training_digest_text(*this);
  return t;
}

ProbeConfig RunConfig::probe_config() const {
  ProbeConfig p;
  p.mode = probe_mode;
  p.feature_crops = probe_feature_crops;
  p.plan = train_config().plan;
  p.epochs = probe_epochs;
  p.batch_size = probe_batch_size;
  p.momentum = momentum;
  p.weight_decay = weight_decay;
  p.num_clips = num_clips;
  p.seed = seed;
  return p;
}

BenchConfig RunConfig::bench_config() const {
  BenchConfig b;
  b.model = preset_model(bench_preset);
  b.model.transformer.num_layers = transformer_layers;
  b.model.transformer.num_heads = transformer_heads;
  b.model.transformer.ff_dim = transformer_ff;
  b.model.transformer.model_dim = b.model.visual.feature_dim();
  b.ks = bench_ks;
  b.batch_size = bench_batch_size;
  b.repeats = bench_repeats;
  b.warmup = bench_warmup;
  b.threads = threads;
  b.min_step_ms = bench_min_step_ms;
  b.seed = seed;
  return b;
}

std::string RunConfig::out_dir() const {
  if (!out.empty()) return out;
  if (const char* env = std::getenv("STICA_OUT"); env && *env) return env;
  return "runs";
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be at least 1");
  const TrainConfig t = train_config();
  t.validate();
  if (num_clips == 0) throw ConfigError("eval.num_clips must be positive");
  switch (command) {
    case Command::Pretrain:
      break;
    case Command::Probe:
      if (probe_epochs == 0 || probe_batch_size == 0) throw ConfigError("probe.epochs and probe.batch_size must be positive");
      if (probe_feature_crops && plan.m + plan.n == 0)
        throw ConfigError("probe.feature_crops needs crop.m + crop.n > 0");
      break;
    case Command::Retrieve: {
      if (checkpoint.empty()) throw ConfigError("retrieve needs a trained model: set `checkpoint`");
      const std::size_t gallery = static_cast<std::size_t>(
          static_cast<double>(data.instances_per_class) * data.train_fraction) * data.num_classes;
      for (auto k : retrieve_ks)
        if (k == 0 || k > gallery)
          throw ConfigError("retrieve.ks entry " + std::to_string(k) + " exceeds the gallery size " + std::to_string(gallery) +
                            " set by data.per_class and data.train_fraction");
      break;
    }
    case Command::Bench:
      bench_config().validate();
      break;
    case Command::Heatmap:
      if (checkpoint.empty()) throw ConfigError("heatmap needs a trained model: set `checkpoint`");
      if (heatmap_count == 0) throw ConfigError("heatmap.count must be positive");
      break;
  }
}

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : keys())
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  throw ConfigError("unknown key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected `key = value`, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key before '='");
    try {
      set_config_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig parse_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str(), path);
  }
  for (const auto& [key, value] : overrides) {
    try {
      set_config_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("--") + key + ": " + e.what());
    }
  }
  return cfg;
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

std::string training_digest_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) {
    const auto& n = k.name;
    const bool relevant = n == "seed" || n.rfind("data.", 0) == 0 || n.rfind("encoder.", 0) == 0 ||
                          n.rfind("model.", 0) == 0 || n.rfind("transformer.", 0) == 0 || n.rfind("head.", 0) == 0 ||
                          n.rfind("crop.", 0) == 0 || n.rfind("loss.", 0) == 0 || n.rfind("augment.", 0) == 0 ||
                          (n.rfind("train.", 0) == 0 && n != "train.epochs" && n != "train.checkpoint_every" &&
                           n != "train.resume");
    if (relevant) out += n + " = " + k.get(cfg) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

}  // namespace stica
