#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stica/evaluation.hpp"
#include "stica/training.hpp"

namespace stica {

enum class Command { Pretrain, Probe, Retrieve, Bench, Heatmap };
Command parse_command(const std::string& name);
std::string to_string(Command c);

// Everything one invocation needs. Files hold `key = value` lines with dotted
// keys; format_config lists every key.
struct RunConfig {
  Command command = Command::Pretrain;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;         // empty: $STICA_OUT, else "runs"
  std::string checkpoint;  // parameters for probe, retrieve, heatmap

  SyntheticDatasetSpec data{};
  // Visual and audio encoder geometry only; pooler and head sizes come from
  // their own keys.
  std::string encoder_preset = "desk";  // desk | micro | bench
  nn::TemporalPooling pooling = nn::TemporalPooling::Transformer;
  std::size_t transformer_layers = 2, transformer_heads = 4, transformer_ff = 128;
  nn::Aggregation aggregation = nn::Aggregation::Mean;
  std::size_t head_hidden = 64, embed_dim = 32;

  CropPlan plan{};
  LossWeights weights{};
  AugmentConfig augment{};
  std::size_t batch_size = 8, epochs = 30, warmup_epochs = 2, checkpoint_every = 0;
  double base_lr = 0.05, momentum = 0.9, weight_decay = 1e-5;
  std::string resume;

  ProbeMode probe_mode = ProbeMode::Linear;
  bool probe_feature_crops = false;
  std::size_t probe_epochs = 12, probe_batch_size = 8;
  std::vector<std::size_t> retrieve_ks{1, 5, 20};
  std::size_t num_clips = 10;
  std::size_t heatmap_count = 8;

  std::string bench_preset = "bench";
  std::vector<std::size_t> bench_ks{2, 4, 8};
  std::size_t bench_batch_size = 4, bench_repeats = 5, bench_warmup = 1;
  double bench_min_step_ms = 5.0;

  nn::ModelConfig model_config() const;
  TrainConfig train_config() const;
  ProbeConfig probe_config() const;
  BenchConfig bench_config() const;
  // Resolved output directory.
  std::string out_dir() const;
  // Cross-field checks for the selected command; throws ConfigError.
  void validate() const;
};

nn::ModelConfig preset_model(const std::string& preset);

// Sets one key from its text value; unknown keys and bad values throw
// ConfigError naming the key.
void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value);
// Parses file text onto `cfg`; errors carry `source:line`.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source);
// Defaults, then the file (if any), then overrides in order.
RunConfig parse_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides);
// One `key = value` line per key, in a fixed order.
std::string format_config(const RunConfig& cfg);
// The subset of format_config that determines training; hashed into
// checkpoints so a resume with a different setup is refused.
std::string training_digest_text(const RunConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace stica
