#include "stica/nn/encoder.hpp"

#include <cmath>

namespace stica::nn {

namespace {

std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad, const std::string& what) {
  if (stride == 0 || kernel == 0) throw ConfigError(what + ": kernel and stride must be positive");
  if (in + 2 * pad < kernel)
    throw ConfigError(what + ": extent " + std::to_string(in) + " collapses under kernel " + std::to_string(kernel));
  return (in + 2 * pad - kernel) / stride + 1;
}

Tensor as_batch(const Tensor& x, std::size_t rank, bool& squeezed) {
  squeezed = x.rank() + 1 == rank;
  if (!squeezed) return x;
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  return reshape(x, std::move(s));
}

Tensor unbatch(const Tensor& y) {
  Shape s(y.shape().begin() + 1, y.shape().end());
  return reshape(y, std::move(s));
}

}  // namespace

void EncoderConfig::validate() const {
  if (stages.empty()) throw ConfigError("encoder: at least one stage required");
  std::size_t t = in_frames, h = in_height, w = in_width;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string tag = "encoder.stage" + std::to_string(i);
    if (s.channels == 0) throw ConfigError(tag + ": zero channels");
    h = conv_extent(h, s.spatial_kernel, s.spatial_stride, s.spatial_pad, tag + " spatial");
    w = conv_extent(w, s.spatial_kernel, s.spatial_stride, s.spatial_pad, tag + " spatial");
    t = conv_extent(t, s.temporal_kernel, s.temporal_stride, s.temporal_pad, tag + " temporal");
  }
  if (t != out_frames || h != out_height || w != out_width)
    throw ConfigError("encoder: reference input " + to_string(input_shape()) + " maps to grid " +
                      to_string({t, h, w}) + ", expected " + to_string({out_frames, out_height, out_width}));
}

EncoderConfig EncoderConfig::desk() {
  EncoderConfig c;
  c.in_frames = 8;
  c.in_height = c.in_width = 56;
  c.stages = {{16, 4, 4, 0, 2, 2, 0}, {32, 3, 2, 1, 1, 1, 0}, {64, 3, 1, 1, 1, 1, 0}};
  c.out_frames = 4;
  c.out_height = c.out_width = 7;
  return c;
}

EncoderConfig EncoderConfig::paper() {
  EncoderConfig c;
  c.in_frames = 30;
  c.in_height = c.in_width = 112;
  c.stages = {{64, 3, 2, 1, 3, 2, 1}, {128, 3, 2, 1, 3, 2, 1}, {256, 3, 2, 1, 3, 2, 1}, {512, 3, 2, 1, 1, 1, 0}};
  c.out_frames = 4;
  c.out_height = c.out_width = 7;
  return c;
}

EncoderConfig EncoderConfig::bench() {
  EncoderConfig c;
  c.in_frames = 8;
  c.in_height = c.in_width = 112;
  c.stages = {{32, 4, 4, 0, 2, 2, 0}, {64, 3, 2, 1, 1, 1, 0}, {64, 3, 2, 1, 1, 1, 0}};
  c.out_frames = 4;
  c.out_height = c.out_width = 7;
  return c;
}

EncoderConfig EncoderConfig::micro() {
  EncoderConfig c;
  c.in_frames = 4;
  c.in_height = c.in_width = 8;
  c.stages = {{4, 3, 2, 1, 2, 2, 0}, {8, 3, 2, 1, 1, 1, 0}};
  c.out_frames = 2;
  c.out_height = c.out_width = 2;
  return c;
}

StageParams make_stage_params(ParamSet& params, const std::string& prefix, std::size_t in_channels,
                              const StageSpec& spec, bool normalize, Rng& rng, bool last) {
  StageParams p;
  const std::size_t c = spec.channels;
  const double sb = std::sqrt(1.0 / static_cast<double>(in_channels * spec.spatial_kernel * spec.spatial_kernel));
  p.spatial_weight = params.add_uniform(prefix + ".spatial.weight", {c, in_channels, spec.spatial_kernel, spec.spatial_kernel}, sb, rng);
  p.spatial_bias = params.add_constant(prefix + ".spatial.bias", {c}, 0.0);
  if (normalize) {
    p.spatial_gain = params.add_constant(prefix + ".spatial_norm.gain", {c}, 1.0);
    p.spatial_shift = params.add_constant(prefix + ".spatial_norm.bias", {c}, 0.0);
  }
  const double tb = std::sqrt(1.0 / static_cast<double>(c * spec.temporal_kernel));
  p.temporal_weight = params.add_uniform(prefix + ".temporal.weight", {c, c, spec.temporal_kernel}, tb, rng);
  p.temporal_bias = last && !normalize ? Tensor({c}, 0.0) : params.add_constant(prefix + ".temporal.bias", {c}, 0.0);
  if (normalize) {
    p.temporal_gain = params.add_constant(prefix + ".temporal_norm.gain", {c}, 1.0);
    p.temporal_shift = last ? Tensor({c}, 0.0) : params.add_constant(prefix + ".temporal_norm.bias", {c}, 0.0);
  }
  return p;
}

Tensor conv2plus1d(const Tensor& x, const StageSpec& spec, const StageParams& p) {
  if (x.rank() != 4 && x.rank() != 5)
    throw ShapeError("conv2plus1d: expected C×T×H×W or N×C×T×H×W, got " + to_string(x.shape()));
  bool squeezed = false;
  Tensor h = as_batch(x, 5, squeezed);
  h = conv_spatial(h, p.spatial_weight, p.spatial_bias, spec.spatial_stride, spec.spatial_pad);
  if (p.spatial_gain.defined()) h = frame_norm(h, p.spatial_gain, p.spatial_shift);
  h = relu(h);
  h = conv_temporal(h, p.temporal_weight, p.temporal_bias, spec.temporal_stride, spec.temporal_pad);
  if (p.temporal_gain.defined()) h = frame_norm(h, p.temporal_gain, p.temporal_shift);
  h = relu(h);
  return squeezed ? unbatch(h) : h;
}

VisualEncoder::VisualEncoder(ParamSet& params, const std::string& prefix, EncoderConfig cfg, Rng& rng)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::size_t in = cfg_.in_channels;
  for (std::size_t i = 0; i < cfg_.stages.size(); ++i) {
    const bool last = i + 1 == cfg_.stages.size();
    stages_.push_back(
        make_stage_params(params, prefix + ".stage" + std::to_string(i), in, cfg_.stages[i], cfg_.normalize, rng, last));
    in = cfg_.stages[i].channels;
  }
}

Tensor VisualEncoder::operator()(const Tensor& x) const {
  const Shape expect = cfg_.input_shape();
  const bool single = x.shape() == expect;
  const bool batched = x.rank() == 5 && Shape(x.shape().begin() + 1, x.shape().end()) == expect;
  if (!single && !batched)
    throw ShapeError("visual encoder: input " + to_string(x.shape()) + " does not match configured " + to_string(expect));
  bool squeezed = false;
  Tensor h = as_batch(x, 5, squeezed);
  for (std::size_t i = 0; i < stages_.size(); ++i) h = conv2plus1d(h, cfg_.stages[i], stages_[i]);
  return squeezed ? unbatch(h) : h;
}

void AudioEncoderConfig::validate() const {
  if (widths.empty()) throw ConfigError("audio encoder: at least one stage required");
  std::size_t f = freq_bins, t = frames;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] == 0) throw ConfigError("audio.stage" + std::to_string(i) + ": zero channels");
    f = conv_extent(f, 3, 2, 1, "audio.stage" + std::to_string(i));
    t = conv_extent(t, 3, 2, 1, "audio.stage" + std::to_string(i));
  }
}

AudioEncoder::AudioEncoder(ParamSet& params, const std::string& prefix, AudioEncoderConfig cfg, Rng& rng)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::size_t in = 1;
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
    const std::string tag = prefix + ".stage" + std::to_string(i);
    const std::size_t c = cfg_.widths[i];
    const bool last = i + 1 == cfg_.widths.size();
    StageParams p;
    p.spatial_weight = params.add_uniform(tag + ".conv.weight", {c, in, 3, 3}, std::sqrt(1.0 / static_cast<double>(in * 9)), rng);
    p.spatial_bias = last && !cfg_.normalize ? Tensor({c}, 0.0) : params.add_constant(tag + ".conv.bias", {c}, 0.0);
    if (cfg_.normalize) {
      p.spatial_gain = params.add_constant(tag + ".norm.gain", {c}, 1.0);
      p.spatial_shift = last ? Tensor({c}, 0.0) : params.add_constant(tag + ".norm.bias", {c}, 0.0);
    }
    stages_.push_back(std::move(p));
    in = c;
  }
}

Tensor AudioEncoder::feature_map(const Tensor& a) const {
  const Shape expect = cfg_.input_shape();
  const bool single = a.shape() == expect;
  const bool batched = a.rank() == 4 && Shape(a.shape().begin() + 1, a.shape().end()) == expect;
  if (!single && !batched)
    throw ShapeError("audio encoder: input " + to_string(a.shape()) + " does not match configured " + to_string(expect));
  const std::size_t n = single ? 1 : a.size(0);
  // A spectrogram is a one-frame clip: N×1×1×F×Ta.
  Tensor h = reshape(a, {n, 1, 1, cfg_.freq_bins, cfg_.frames});
  for (const auto& p : stages_) {
    h = conv_spatial(h, p.spatial_weight, p.spatial_bias, 2, 1);
    if (p.spatial_gain.defined()) h = frame_norm(h, p.spatial_gain, p.spatial_shift);
    h = relu(h);
  }
  return h;
}

Tensor AudioEncoder::operator()(const Tensor& a) const {
  const bool single = a.rank() == 3;
  Tensor pooled = spatial_pool(feature_map(a));  // N×D×1
  const std::size_t n = pooled.size(0);
  return single ? reshape(pooled, {cfg_.feature_dim()}) : reshape(pooled, {n, cfg_.feature_dim()});
}

}  // namespace stica::nn
