#pragma once

#include <string>
#include <vector>

#include "stica/augment.hpp"
#include "stica/data.hpp"
#include "stica/nn/model.hpp"
#include "stica/training.hpp"

namespace stica {

// Clip starts uniformly spaced over [0, T - clip_len]; a single clip is
// centred.
std::vector<std::size_t> clip_starts(std::size_t frames, std::size_t clip_len, std::size_t num_clips);

// Spatial max pool then the model's temporal pool: N×D×T1×H1×W1 → N×D.
// Differentiable; `offsets` give each sequence's absolute start time.
Tensor max_pooled_features(const nn::Model& model, const Tensor& feat, std::span<const std::size_t> offsets = {});

// C×T×H×W → D. Clips of the encoder length, frames resized to the encoder
// input, encoded, max pooled over space, pooled over time, averaged.
Tensor extract_video_embedding(const Tensor& video, const nn::Model& model, std::size_t num_clips = 10);
// One row per instance, N×D.
Tensor embed_videos(const std::vector<AVInstance>& items, const nn::Model& model, std::size_t num_clips = 10);

struct RetrievalIndex {
  Tensor gallery;  // G×D
  std::vector<int> labels;
};

// recall[i] for ks[i]: fraction of queries whose top-k cosine neighbours
// (ties broken by gallery index) hold a same-class item.
std::vector<double> retrieval_recall(const Tensor& queries, const std::vector<int>& query_labels,
                                     const RetrievalIndex& index, const std::vector<std::size_t>& ks = {1, 5, 20});

// Appends `metric,k_or_mode,value`, writing the header to a new file.
void append_result_csv(const std::string& path, const std::string& metric, const std::string& k_or_mode, double value);

enum class ProbeMode { Linear, Full };

struct ProbeConfig {
  ProbeMode mode = ProbeMode::Linear;
  bool feature_crops = false;
  CropPlan plan{};
  std::size_t epochs = 12;
  std::size_t batch_size = 8;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::size_t num_clips = 10;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double train_accuracy = 0.0, test_accuracy = 0.0;
};

// Classifier head on standardised pooled features trained on data.train
// with the finetune schedule; linear mode leaves the backbone untouched.
ProbeResult finetune_probe(const Dataset& data, nn::Model& model, std::size_t num_classes, const ProbeConfig& cfg);

// T1×H1×W1 map of dot products between each feature cell and the pooled
// audio feature (both before the projection heads). video is C×T0×H×W.
Tensor av_heatmap(const Tensor& video, const Tensor& audio, const nn::Model& model);
// Fraction of time slices whose strongest cell lies within one cell
// (Chebyshev) of the cell holding the blob centre, for a map from av_heatmap
// of the instance's video.
double heatmap_hit_rate(const Tensor& map, const AVInstance& inst, const nn::Model& model);
// Plain PGM (P2), frames stacked vertically, min-max scaled to 0..255.
void write_pgm(const std::string& path, const Tensor& map);

// Desk model with the benchmark encoder.
inline nn::ModelConfig bench_model() {
  nn::ModelConfig m;
  m.visual = nn::EncoderConfig::bench();
  return m;
}

enum class CropStrategy { InputCrop, FeatureCrop };
std::string to_string(CropStrategy s);

struct BenchConfig {
  nn::ModelConfig model = bench_model();
  std::vector<std::size_t> ks{2, 4, 8};
  std::size_t batch_size = 4;
  std::size_t repeats = 5;
  std::size_t warmup = 1;
  int threads = 1;
  double min_step_ms = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BenchRow {
  CropStrategy strategy = CropStrategy::InputCrop;
  std::size_t k = 0;
  double mean_ms = 0.0, std_ms = 0.0;
  std::int64_t peak_bytes = 0;
  std::size_t terms = 0;
};

// Forward and backward of a within-modal objective over k views (k/2 per
// side, 2(k/2)² directed terms). Input crops encode every view; feature
// crops encode two views and slice the rest from their feature maps.
std::vector<BenchRow> crop_cost_benchmark(const BenchConfig& cfg);
void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows);

}  // namespace stica
