#pragma once

#include <string>
#include <vector>

#include "stica/nn/layers.hpp"

namespace stica::nn {

// One factorised (2+1)D stage: a spatial k×k convolution shared across frames
// followed by a temporal convolution shared across cells.
struct StageSpec {
  std::size_t channels = 0;
  std::size_t spatial_kernel = 3, spatial_stride = 1, spatial_pad = 1;
  std::size_t temporal_kernel = 1, temporal_stride = 1, temporal_pad = 0;
};

struct EncoderConfig {
  std::size_t in_channels = 3;
  std::vector<StageSpec> stages;
  std::size_t in_frames = 0, in_height = 0, in_width = 0;
  // Expected output grid for the reference input; validate() checks it.
  std::size_t out_frames = 0, out_height = 0, out_width = 0;
  bool normalize = true;

  std::size_t feature_dim() const { return stages.empty() ? in_channels : stages.back().channels; }
  Shape input_shape() const { return {in_channels, in_frames, in_height, in_width}; }
  Shape output_shape() const { return {feature_dim(), out_frames, out_height, out_width}; }
  // Runs the convolution arithmetic over every stage and throws ConfigError
  // when an extent collapses or the final grid differs from the expected one.
  void validate() const;

  // 3×8×56×56 → 64×4×7×7. Temporal striding happens once, in pairs, in the
  // first stage; later stages mix channels only along time.
  static EncoderConfig desk();
  // 3×30×112×112 → 512×4×7×7, for shape arithmetic only.
  static EncoderConfig paper();
  // 3×4×8×8 → 8×2×2×2, small enough for finite differences.
  static EncoderConfig micro();
  // 3×8×112×112 → 64×4×7×7 with wider early stages; the crop-cost
  // benchmark uses it so that encoding dominates a training step.
  static EncoderConfig bench();
};

struct StageParams {
  Tensor spatial_weight, spatial_bias, temporal_weight, temporal_bias;
  // Per-frame normalisation after each convolution; skipped when undefined.
  Tensor spatial_gain, spatial_shift, temporal_gain, temporal_shift;
};

// The last stage of an encoder has no trainable shift before its final relu:
// pooled features feed a batch-centred head, which cancels any shift shared
// by all samples, so that parameter would often have an exactly zero gradient.
StageParams make_stage_params(ParamSet& params, const std::string& prefix, std::size_t in_channels,
                              const StageSpec& spec, bool normalize, Rng& rng, bool last = false);

// spatial conv → [norm] → relu → temporal conv → [norm] → relu.
// Accepts C×T×H×W or N×C×T×H×W and returns the same rank.
Tensor conv2plus1d(const Tensor& x, const StageSpec& spec, const StageParams& p);

class VisualEncoder {
 public:
  VisualEncoder() = default;
  VisualEncoder(ParamSet& params, const std::string& prefix, EncoderConfig cfg, Rng& rng);

  // C×T0×H0×W0 → D×T1×H1×W1, or batched with a leading N.
  Tensor operator()(const Tensor& x) const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<StageParams> stages_;
};

struct AudioEncoderConfig {
  std::size_t freq_bins = 32, frames = 32;
  std::vector<std::size_t> widths{16, 32, 64};  // each stage: 3×3, stride 2, pad 1
  bool normalize = true;

  std::size_t feature_dim() const { return widths.back(); }
  Shape input_shape() const { return {1, freq_bins, frames}; }
  void validate() const;
  static AudioEncoderConfig desk() { return {}; }
  static AudioEncoderConfig micro() { return {8, 8, {4, 8}, true}; }
};

// 2D convolutional spectrogram encoder ending in global average pooling.
class AudioEncoder {
 public:
  AudioEncoder() = default;
  AudioEncoder(ParamSet& params, const std::string& prefix, AudioEncoderConfig cfg, Rng& rng);

  // 1×F×Ta → D, or N×1×F×Ta → N×D.
  Tensor operator()(const Tensor& a) const;
  // Feature map before pooling: N×D×1×F'×Ta'.
  Tensor feature_map(const Tensor& a) const;
  const AudioEncoderConfig& config() const { return cfg_; }

 private:
  AudioEncoderConfig cfg_;
  std::vector<StageParams> stages_;
};

}  // namespace stica::nn
