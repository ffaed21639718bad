#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stica/nn/layers.hpp"

namespace stica::nn {

// Which time steps take part in attention (true = attend).
class TimeMask {
 public:
  explicit TimeMask(std::vector<bool> keep);
  static TimeMask all(std::size_t length) { return TimeMask(std::vector<bool>(length, true)); }
  // Keeps [begin, end) of `length`.
  static TimeMask window(std::size_t length, std::size_t begin, std::size_t end);

  std::size_t size() const { return keep_.size(); }
  bool operator[](std::size_t i) const { return keep_[i]; }
  std::size_t count() const;
  std::vector<std::uint8_t> bytes() const { return {keep_.begin(), keep_.end()}; }

 private:
  std::vector<bool> keep_;
};

enum class Aggregation { Mean, SummaryToken };

struct TransformerConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t model_dim = 64;
  std::size_t ff_dim = 128;
  Aggregation aggregation = Aggregation::Mean;

  void validate() const;
};

// Fixed sinusoidal encoding row for absolute position `pos`.
std::vector<double> sinusoidal_encoding(std::size_t pos, std::size_t dim);

struct AttentionOutput {
  Tensor output;   // N×T×d
  Tensor weights;  // N×heads×T×T, rows over keys
};

// Scaled dot-product attention of already-projected q, k, v (N×T×d) split
// into `heads` heads. key_mask is N×T (1 = attend); masked keys get weight 0.
AttentionOutput attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const std::uint8_t> key_mask,
                          std::size_t heads);

struct MultiHeadAttention {
  MultiHeadAttention() = default;
  // Without output_bias the value and output projections add no constant,
  // so attention cannot shift every token by the same vector.
  MultiHeadAttention(ParamSet& params, const std::string& name, std::size_t dim, std::size_t heads, Rng& rng,
                     bool output_bias = true);
  AttentionOutput operator()(const Tensor& x, std::span<const std::uint8_t> key_mask) const;

  std::size_t heads = 1;
  Linear wq, wk, wv, wo;
};

struct EncoderLayer {
  EncoderLayer() = default;
  // The last layer adds no constant vector to every token: the pooled output
  // feeds a batch-centred head, which would cancel it exactly.
  EncoderLayer(ParamSet& params, const std::string& name, const TransformerConfig& cfg, Rng& rng, bool last = false);
  // Pre-norm: x + attn(ln(x)), then + ff(ln(x)) with a gelu feed-forward.
  Tensor operator()(const Tensor& x, std::span<const std::uint8_t> key_mask) const;

  LayerNorm norm1, norm2;
  MultiHeadAttention attn;
  Linear ff1, ff2;
};

// Temporal pooling by a shallow transformer encoder followed by aggregation
// over the attended positions.
class TransformerPool {
 public:
  TransformerPool() = default;
  TransformerPool(ParamSet& params, const std::string& prefix, TransformerConfig cfg, Rng& rng);

  // h: D×T sequence for one clip → D. `offset` is the absolute time index
  // of h's first step, so that cropped sequences keep their true positions.
  Tensor operator()(const Tensor& h, const TimeMask& mask, std::size_t offset = 0) const;

  // Batched: h is N×D×T, key_mask N×T (empty = all attend), offsets one per
  // instance (empty = all zero) → N×D.
  Tensor forward(const Tensor& h, std::span<const std::uint8_t> key_mask = {},
                 std::span<const std::size_t> offsets = {}) const;

  const TransformerConfig& config() const { return cfg_; }
  const std::vector<EncoderLayer>& layers() const { return layers_; }

 private:
  TransformerConfig cfg_;
  std::vector<EncoderLayer> layers_;
  Tensor summary_;
};

}  // namespace stica::nn
