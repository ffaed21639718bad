#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stica/rng.hpp"
#include "stica/tensor.hpp"

namespace stica {

// Classes come in time-reversed pairs: class 2p shows pattern P then Q,
// class 2p+1 shows Q then P. The pattern switches halfway through the clip
// and the audio switches bands at the same moment. Each instance draws its
// own start position and a direction of motion from {±x, ±y}, so playing a
// clip backwards yields a typical clip of the paired class.
struct SyntheticDatasetSpec {
  std::size_t num_classes = 4;
  std::size_t instances_per_class = 50;
  std::size_t frames = 8, height = 56, width = 56;
  std::size_t freq_bins = 32, audio_frames = 32;
  std::size_t speed = 3;         // pixels per frame
  std::size_t blob_radius = 8;
  double noise = 0.05;
  double train_fraction = 0.8;
  std::uint64_t seed = 1;

  void validate() const;
};

struct AVInstance {
  Tensor video;  // 3×T×H×W in [0, 1]
  Tensor audio;  // 1×F×Ta
  int class_id = 0;
  std::uint64_t instance_id = 0;
  // Ground truth for localisation checks: blob centre per frame.
  std::vector<std::size_t> center_x, center_y;
  int direction = 0;  // 0:+x 1:+y 2:-x 3:-y
};

AVInstance generate_instance(const SyntheticDatasetSpec& spec, int class_id, Rng& rng);

// The per-instance stream used by build_dataset.
Rng instance_rng(const SyntheticDatasetSpec& spec, std::uint64_t instance_id);

struct Dataset {
  std::vector<AVInstance> train, test;
};

// Balanced deterministic split: within each class, instances are ordered by
// a seeded hash of their id and the first train_fraction go to train.
Dataset build_dataset(const SyntheticDatasetSpec& spec);

// One shuffled epoch of index batches of size n; the remainder is dropped.
std::vector<std::vector<std::size_t>> iterate_batches(std::size_t dataset_size, std::size_t n, Rng& rng);

// N×3×T×H×W and N×1×F×Ta stacks of the selected instances.
Tensor stack_videos(const std::vector<AVInstance>& items, std::span<const std::size_t> indices);
Tensor stack_audio(const std::vector<AVInstance>& items, std::span<const std::size_t> indices);

// Writes instances in the checkpoint tensor container: per instance
// "video.<id>", "audio.<id>" and a one-element "label.<id>".
void export_instances(const std::string& path, const std::vector<AVInstance>& items);

}  // namespace stica
