#pragma once

#include <span>
#include <string>

#include "stica/nn/encoder.hpp"
#include "stica/nn/transformer.hpp"

namespace stica::nn {

enum class TemporalPooling { Transformer, Average };

struct ModelConfig {
  EncoderConfig visual = EncoderConfig::desk();
  AudioEncoderConfig audio = AudioEncoderConfig::desk();
  TransformerConfig transformer{};
  TemporalPooling pooling = TemporalPooling::Transformer;
  std::size_t head_hidden = 64;
  std::size_t embed_dim = 32;

  void validate() const;
  static ModelConfig desk() { return {}; }
  static ModelConfig micro();
};

// Visual encoder, audio encoder, temporal pooler and the two projection
// heads, with all parameters in one ParamSet.
class Model {
 public:
  Model(const ModelConfig& cfg, Rng& rng);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const VisualEncoder& visual() const { return visual_; }
  const AudioEncoder& audio() const { return audio_; }
  const TransformerPool& transformer() const { return transformer_; }
  const ProjectionHead& visual_head() const { return visual_head_; }
  const ProjectionHead& audio_head() const { return audio_head_; }

  // N×3×T0×H0×W0 → N×D×T1×H1×W1.
  Tensor encode_video(const Tensor& video) const { return visual_(video); }
  // N×D×T → N×D with the configured temporal pool. offsets give each
  // sequence's absolute start time.
  Tensor pool_time(const Tensor& h, std::span<const std::uint8_t> key_mask = {},
                   std::span<const std::size_t> offsets = {}) const;
  // Feature map (possibly cropped) → spatial mean → temporal pool → N×D.
  Tensor pool_features(const Tensor& feat, std::span<const std::size_t> offsets = {}) const;
  Tensor embed_features(const Tensor& feat, std::span<const std::size_t> offsets = {}) const {
    return visual_head_(pool_features(feat, offsets));
  }
  // N×1×F×Ta → N×D (pooled audio feature) and its embedding.
  Tensor audio_feature(const Tensor& audio) const { return audio_(audio); }
  Tensor embed_audio(const Tensor& audio) const { return audio_head_(audio_(audio)); }

 private:
  ModelConfig cfg_;
  ParamSet params_;
  VisualEncoder visual_;
  AudioEncoder audio_;
  TransformerPool transformer_;
  ProjectionHead visual_head_, audio_head_;
};

}  // namespace stica::nn
