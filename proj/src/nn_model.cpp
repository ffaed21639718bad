#include "stica/nn/model.hpp"

namespace stica::nn {

void ModelConfig::validate() const {
  visual.validate();
  audio.validate();
  transformer.validate();
  if (transformer.model_dim != visual.feature_dim())
    throw ConfigError("model: transformer.dim " + std::to_string(transformer.model_dim) + " differs from encoder width " +
                      std::to_string(visual.feature_dim()));
  if (audio.feature_dim() != visual.feature_dim())
    throw ConfigError("model: audio width " + std::to_string(audio.feature_dim()) + " differs from encoder width " +
                      std::to_string(visual.feature_dim()));
  if (head_hidden == 0 || embed_dim == 0) throw ConfigError("model: head dimensions must be positive");
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.visual = EncoderConfig::micro();
  c.audio = AudioEncoderConfig::micro();
  c.transformer = {2, 2, 8, 16, Aggregation::Mean};
  c.head_hidden = 8;
  c.embed_dim = 4;
  return c;
}

namespace {
const ModelConfig& checked(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}
}  // namespace

Model::Model(const ModelConfig& cfg, Rng& rng)
    : cfg_(checked(cfg)),
      visual_(params_, "visual", cfg_.visual, rng),
      audio_(params_, "audio", cfg_.audio, rng) {
  if (cfg_.pooling == TemporalPooling::Transformer) transformer_ = TransformerPool(params_, "pool", cfg_.transformer, rng);
  const std::size_t d = cfg_.visual.feature_dim();
  visual_head_ = ProjectionHead(params_, "head.visual", d, cfg_.head_hidden, cfg_.embed_dim, rng);
  audio_head_ = ProjectionHead(params_, "head.audio", d, cfg_.head_hidden, cfg_.embed_dim, rng);
}

Tensor Model::pool_time(const Tensor& h, std::span<const std::uint8_t> key_mask,
                        std::span<const std::size_t> offsets) const {
  if (cfg_.pooling == TemporalPooling::Transformer) return transformer_.forward(h, key_mask, offsets);
  if (key_mask.empty()) return temporal_avg_pool(h);
  const std::size_t n = h.size(0), t = h.size(2);
  if (key_mask.size() != n * t) throw ShapeError("pool_time: mask size does not match N×T");
  std::vector<double> w(n * t);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t kept = 0;
    for (std::size_t s = 0; s < t; ++s) kept += key_mask[i * t + s] != 0;
    if (kept == 0) throw ShapeError("pool_time: instance " + std::to_string(i) + " has every position masked");
    for (std::size_t s = 0; s < t; ++s) w[i * t + s] = key_mask[i * t + s] ? 1.0 / static_cast<double>(kept) : 0.0;
  }
  // (N×D×T) · (N×T×1)
  return reshape(matmul(h, Tensor({n, t, 1}, std::move(w))), {n, h.size(1)});
}

Tensor Model::pool_features(const Tensor& feat, std::span<const std::size_t> offsets) const {
  if (feat.rank() != 5) throw ShapeError("pool_features: expected N×D×T×H×W, got " + to_string(feat.shape()));
  return pool_time(spatial_pool(feat), {}, offsets);
}

}  // namespace stica::nn
