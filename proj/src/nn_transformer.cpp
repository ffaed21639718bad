#include "stica/nn/transformer.hpp"

#include <algorithm>
#include <cmath>

namespace stica::nn {

TimeMask::TimeMask(std::vector<bool> keep) : keep_(std::move(keep)) {
  if (count() == 0) throw ShapeError("time mask: at least one position must participate");
}

TimeMask TimeMask::window(std::size_t length, std::size_t begin, std::size_t end) {
  if (begin >= end || end > length)
    throw ShapeError("time mask: window [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside length " +
                     std::to_string(length));
  std::vector<bool> keep(length, false);
  std::fill(keep.begin() + static_cast<std::ptrdiff_t>(begin), keep.begin() + static_cast<std::ptrdiff_t>(end), true);
  return TimeMask(std::move(keep));
}

std::size_t TimeMask::count() const { return static_cast<std::size_t>(std::count(keep_.begin(), keep_.end(), true)); }

void TransformerConfig::validate() const {
  if (num_heads == 0 || model_dim == 0 || model_dim % num_heads != 0)
    throw ConfigError("transformer: model_dim " + std::to_string(model_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  if (ff_dim == 0) throw ConfigError("transformer: ff_dim must be positive");
}

std::vector<double> sinusoidal_encoding(std::size_t pos, std::size_t dim) {
  std::vector<double> row(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
    const double angle = static_cast<double>(pos) * rate;
    row[i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
  }
  return row;
}

AttentionOutput attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const std::uint8_t> key_mask,
                          std::size_t heads) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeError("attention: q, k, v must share an N×T×d shape, got " + to_string(q.shape()) + ", " +
                     to_string(k.shape()) + ", " + to_string(v.shape()));
  const std::size_t n = q.size(0), t = q.size(1), d = q.size(2);
  if (heads == 0 || d % heads != 0)
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  if (key_mask.size() != n * t)
    throw ShapeError("attention: mask has " + std::to_string(key_mask.size()) + " entries, expected " + std::to_string(n * t));
  const std::size_t dh = d / heads;
  auto split = [&](const Tensor& x) { return permute(reshape(x, {n, t, heads, dh}), {0, 2, 1, 3}); };
  const Tensor qh = split(q), kh = split(k), vh = split(v);
  const Tensor scores = mul_scalar(matmul(qh, transpose(kh, 2, 3)), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor w = masked_softmax(scores, key_mask);
  const Tensor out = reshape(permute(matmul(w, vh), {0, 2, 1, 3}), {n, t, d});
  return {out, w};
}

MultiHeadAttention::MultiHeadAttention(ParamSet& params, const std::string& name, std::size_t dim, std::size_t h, Rng& rng,
                                       bool output_bias)
    : heads(h),
      wq(params, name + ".q", dim, dim, rng),
      // Softmax over keys cancels any key bias, so none is kept.
      wk(params, name + ".k", dim, dim, rng, false),
      wv(params, name + ".v", dim, dim, rng, output_bias),
      wo(params, name + ".out", dim, dim, rng, output_bias) {}

AttentionOutput MultiHeadAttention::operator()(const Tensor& x, std::span<const std::uint8_t> key_mask) const {
  auto r = attention(wq(x), wk(x), wv(x), key_mask, heads);
  r.output = wo(r.output);
  return r;
}

EncoderLayer::EncoderLayer(ParamSet& params, const std::string& name, const TransformerConfig& cfg, Rng& rng, bool last)
    : norm1(params, name + ".norm1", cfg.model_dim),
      norm2(params, name + ".norm2", cfg.model_dim),
      attn(params, name + ".attn", cfg.model_dim, cfg.num_heads, rng, !last),
      ff1(params, name + ".ff1", cfg.model_dim, cfg.ff_dim, rng),
      ff2(params, name + ".ff2", cfg.ff_dim, cfg.model_dim, rng, !last) {}

Tensor EncoderLayer::operator()(const Tensor& x, std::span<const std::uint8_t> key_mask) const {
  const Tensor y = x + attn(norm1(x), key_mask).output;
  return y + ff2(gelu(ff1(norm2(y))));
}

TransformerPool::TransformerPool(ParamSet& params, const std::string& prefix, TransformerConfig cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  for (std::size_t i = 0; i < cfg_.num_layers; ++i)
    layers_.emplace_back(params, prefix + ".layer" + std::to_string(i), cfg_, rng, i + 1 == cfg_.num_layers);
  if (cfg_.aggregation == Aggregation::SummaryToken)
    summary_ = params.add_uniform(prefix + ".summary", {cfg_.model_dim}, std::sqrt(1.0 / static_cast<double>(cfg_.model_dim)), rng);
}

Tensor TransformerPool::operator()(const Tensor& h, const TimeMask& mask, std::size_t offset) const {
  if (h.rank() != 2) throw ShapeError("transformer pool: expected D×T, got " + to_string(h.shape()));
  if (h.size(1) != mask.size())
    throw ShapeError("transformer pool: sequence length " + std::to_string(h.size(1)) + " vs mask length " +
                     std::to_string(mask.size()));
  const auto bytes = mask.bytes();
  const std::size_t offsets[1] = {offset};
  return reshape(forward(reshape(h, {1, h.size(0), h.size(1)}), bytes, offsets), {cfg_.model_dim});
}

Tensor TransformerPool::forward(const Tensor& h, std::span<const std::uint8_t> key_mask,
                                std::span<const std::size_t> offsets) const {
  if (h.rank() != 3 || h.size(1) != cfg_.model_dim)
    throw ShapeError("transformer pool: expected N×" + std::to_string(cfg_.model_dim) + "×T, got " + to_string(h.shape()));
  const std::size_t n = h.size(0), d = cfg_.model_dim, t = h.size(2);
  std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());
  if (mask.empty()) mask.assign(n * t, 1);
  if (mask.size() != n * t) throw ShapeError("transformer pool: mask size does not match N×T");
  if (!offsets.empty() && offsets.size() != n) throw ShapeError("transformer pool: need one offset per instance");

  std::vector<double> pe(n * t * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < t; ++s) {
      const auto row = sinusoidal_encoding((offsets.empty() ? 0 : offsets[i]) + s, d);
      std::copy(row.begin(), row.end(), pe.begin() + static_cast<std::ptrdiff_t>((i * t + s) * d));
    }
  Tensor x = transpose(h, 1, 2) + Tensor({n, t, d}, std::move(pe));

  std::size_t len = t;
  if (cfg_.aggregation == Aggregation::SummaryToken) {
    // The summary token sits in front of the sequence without a position.
    const Tensor tok = broadcast_to(reshape(summary_, {1, 1, d}), {n, 1, d});
    const Tensor parts[2] = {tok, x};
    x = concat(parts, 1);
    std::vector<std::uint8_t> extended;
    extended.reserve(n * (t + 1));
    for (std::size_t i = 0; i < n; ++i) {
      extended.push_back(1);
      extended.insert(extended.end(), mask.begin() + static_cast<std::ptrdiff_t>(i * t),
                      mask.begin() + static_cast<std::ptrdiff_t>((i + 1) * t));
    }
    mask = std::move(extended);
    len = t + 1;
  }
  for (const auto& layer : layers_) x = layer(x, mask);

  if (cfg_.aggregation == Aggregation::SummaryToken) return reshape(slice(x, 1, 0, 1), {n, d});

  // Mean over attended positions as a masked weighted sum.
  std::vector<double> weights(n * len);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t kept = 0;
    for (std::size_t s = 0; s < len; ++s) kept += mask[i * len + s] != 0;
    if (kept == 0) throw ShapeError("transformer pool: instance " + std::to_string(i) + " has every position masked");
    for (std::size_t s = 0; s < len; ++s) weights[i * len + s] = mask[i * len + s] ? 1.0 / static_cast<double>(kept) : 0.0;
  }
  const Tensor w({n, 1, len}, std::move(weights));
  return reshape(matmul(w, x), {n, d});
}

}  // namespace stica::nn
