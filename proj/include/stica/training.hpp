#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stica/augment.hpp"
#include "stica/contrastive.hpp"
#include "stica/data.hpp"
#include "stica/nn/model.hpp"

namespace stica {

struct OptimizerState {
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::vector<std::vector<double>> buffers;  // one per parameter, lazily sized
  std::uint64_t step = 0;
};

// buf ← μ·buf + g + wd·p ; p ← p − lr·buf ; gradients are then zeroed.
// A non-finite gradient aborts the whole step (no parameter or buffer
// changes) and returns false.
bool sgd_step(std::span<Tensor> params, OptimizerState& state, double lr);
std::vector<Tensor> param_tensors(const nn::ParamSet& params);

enum class PostWarmup { Constant, StepDecay };

struct ScheduleSpec {
  double base_lr = 0.05;
  std::size_t warmup_epochs = 2;
  std::size_t steps_per_epoch = 1;
  // Without a start value the ramp climbs base/W, 2·base/W, …, base over W
  // warm-up steps; with one it runs linearly from start_lr at step 0 to
  // base_lr at step W.
  std::optional<double> start_lr;
  PostWarmup policy = PostWarmup::Constant;
  std::vector<std::size_t> milestones;  // epochs
  double factor = 1.0;

  void validate() const;
  // Warm up 0.0025 → 0.02 over two epochs, ×0.05 at epochs 6 and 10.
  static ScheduleSpec finetune(std::size_t steps_per_epoch);
};

double lr_schedule(const ScheduleSpec& spec, std::uint64_t step);

struct AugmentConfig {
  CropSampling crop{};
  PhotometricParams photometric{};
  double audio_gain_jitter = 0.2;
};

struct StepMetrics {
  std::uint64_t step = 0;  // 1-based global step
  std::uint64_t epoch = 0; // 1-based
  double lr = 0.0;
  double loss_total = 0.0, loss_vv = 0.0, loss_va = 0.0;
  std::size_t vv_terms = 0;
  bool applied = false;    // false when skipped (zero objective or non-finite)
  bool nonfinite = false;  // the loss or a gradient was not finite
};

// Two augmented large crops per instance, encoding, view sets, losses,
// backward and one SGD step. With both loss weights at zero the objective
// is identically zero and no step is taken.
StepMetrics train_step(const Tensor& videos, const Tensor& audio, nn::Model& model, OptimizerState& opt,
                       const LossWeights& weights, const CropPlan& plan, const AugmentConfig& aug, double lr, Rng& rng);

// The differentiable part of train_step for already augmented inputs.
struct LossParts {
  Tensor total, vv, va;
  std::size_t vv_terms = 0;
};
LossParts compute_losses(const Tensor& large1, const Tensor& large2, const Tensor& audio, const nn::Model& model,
                         const LossWeights& weights, const CropPlan& plan, Rng& rng);

// Per-instance large crops with photometric jitter, resized to the encoder
// input; returns N×3×T0×H0×W0.
Tensor augment_videos(const Tensor& videos, const nn::EncoderConfig& enc, const AugmentConfig& aug, Rng& rng);
Tensor augment_audio(const Tensor& audio, const AugmentConfig& aug, Rng& rng);

struct TrainConfig {
  SyntheticDatasetSpec data{};
  nn::ModelConfig model = nn::ModelConfig::desk();
  CropPlan plan{};
  LossWeights weights{};
  AugmentConfig augment{};
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
  double base_lr = 0.05;
  std::size_t warmup_epochs = 2;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  // Text whose SHA-256 identifies the configuration inside checkpoints.
  std::string digest_text;

  void validate() const;
};

struct PretrainResult {
  std::vector<StepMetrics> history;
  std::string final_checkpoint;
  std::size_t steps_per_epoch = 0;
};

// Runs (or resumes) pretraining. Writes <out>/metrics.csv and
// <out>/checkpoint_epoch<k>.bin; the model is left in its final state.
PretrainResult run_pretraining(const TrainConfig& cfg, const Dataset& data, nn::Model& model, const std::string& out_dir,
                               const std::string& resume_from = "");

// CSV header and row formatting used for metrics files.
std::string metrics_header();
std::string metrics_row(const StepMetrics& m);

struct TrainerState {
  std::uint64_t step = 0, epoch = 0;
  Rng rng;
  OptimizerState optimizer;
};

// Parameters are stored as "param/<name>", momentum buffers as
// "momentum/<name>". Saving first rounds the live parameters and buffers to
// float32 so that a resumed run continues from exactly the stored state.
void save_checkpoint(const std::string& path, nn::Model& model, TrainerState& state, const std::string& digest_text);
// Restores parameters, buffers, counters and rng; rejects files whose
// digest or parameter table does not match.
void load_checkpoint(const std::string& path, nn::Model& model, TrainerState& state, const std::string& digest_text);
// Parameters only (for evaluation); the digest is not checked.
void load_parameters(const std::string& path, nn::Model& model);

}  // namespace stica
