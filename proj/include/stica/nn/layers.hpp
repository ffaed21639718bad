#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stica/ops.hpp"
#include "stica/rng.hpp"
#include "stica/tensor.hpp"

namespace stica::nn {

// Ordered, named collection of trainable leaves. Modules register into a
// shared set so the optimizer and checkpoints see one flat table.
class ParamSet {
 public:
  // Registers a parameter initialised uniformly in ±bound (0 = constant fill).
  Tensor add_uniform(const std::string& name, Shape shape, double bound, Rng& rng);
  Tensor add_constant(const std::string& name, Shape shape, double value);

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  Tensor find(const std::string& name) const;
  std::size_t count() const { return items_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// y = x·W + b over the last axis. W is in×out, initialised ±sqrt(1/in).
// Without a bias, `bias` stays undefined.
struct Linear {
  Linear() = default;
  Linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;

  Tensor weight, bias;
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParamSet& params, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

  Tensor gain, bias;
};

// Centres each column of N×D on its batch mean (N >= 2), divides by one
// RMS over the whole centred batch and applies a per-column affine map.
// Unlike per-column batch norm it stays well conditioned at N = 2.
Tensor batch_standardize(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Linear → batch_standardize → ReLU → Linear → batch centring, mapping a
// batch of pooled features to embeddings. Pooled features share a large
// common offset, and so do the embeddings unless it is removed; left in, it
// pins every cosine similarity near 1 and the loss sits at chance. Neither
// Linear has a bias, since the centring steps would cancel it.
struct ProjectionHead {
  ProjectionHead() = default;
  ProjectionHead(ParamSet& params, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                 Rng& rng);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_dim() const { return first.weight.size(0); }
  std::size_t out_dim() const { return second.weight.size(1); }

  Linear first, second;
  Tensor norm_gain, norm_bias;
};

// Spatial 2D convolution applied to every frame of N×C×T×H×W clips.
// weight: Cout×Cin×kh×kw, bias: Cout.
Tensor conv_spatial(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad);

// Temporal 1D convolution applied at every pixel of N×C×T×H×W clips.
// weight: Cout×Cin×kt, bias: Cout.
Tensor conv_temporal(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad);

// Per-sample, per-frame normalisation of N×C×T×H×W over (C, H, W) with a
// per-channel gain and bias. Uses no cross-batch statistics.
Tensor frame_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Mean (or max) over the two trailing spatial axes: (..., H, W) → (...).
Tensor spatial_pool(const Tensor& feat);
Tensor spatial_max_pool(const Tensor& feat);
// Mean over the trailing time axis: (..., T) → (...).
Tensor temporal_avg_pool(const Tensor& h);

}  // namespace stica::nn
