#include "stica/nn/layers.hpp"

#include <cmath>

#include "stica/detail/node.hpp"
#include "stica/kernels.hpp"

namespace stica::nn {

using detail::make_result;
using detail::NodePtr;
using kernels::Trans;

Tensor ParamSet::add_uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = bound == 0.0 ? 0.0 : rng.uniform(-bound, bound);
  Tensor t(std::move(shape), std::move(v), true);
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamSet::add_constant(const std::string& name, Shape shape, double value) {
  Tensor t(std::move(shape), value, true);
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamSet::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw ConfigError("no parameter named '" + name + "'");
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : items_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

Linear::Linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  weight = params.add_uniform(name + ".weight", {in, out}, bound, rng);
  if (with_bias) bias = params.add_constant(name + ".bias", {out}, 0.0);
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.shape().empty() || x.shape().back() != weight.size(0))
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not end in " + std::to_string(weight.size(0)));
  if (x.rank() == 1) return reshape((*this)(reshape(x, {1, x.numel()})), {weight.size(1)});
  const Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

LayerNorm::LayerNorm(ParamSet& params, const std::string& name, std::size_t dim) {
  gain = params.add_constant(name + ".gain", {dim}, 1.0);
  bias = params.add_constant(name + ".bias", {dim}, 0.0);
}

ProjectionHead::ProjectionHead(ParamSet& params, const std::string& name, std::size_t in, std::size_t hidden,
                               std::size_t out, Rng& rng)
    : first(params, name + ".fc1", in, hidden, rng, false), second(params, name + ".fc2", hidden, out, rng, false) {
  norm_gain = params.add_constant(name + ".bn.gain", {hidden}, 1.0);
  norm_bias = params.add_constant(name + ".bn.bias", {hidden}, 0.0);
}

Tensor ProjectionHead::operator()(const Tensor& x) const {
  const Tensor y = second(relu(batch_standardize(first(x), norm_gain, norm_bias)));
  return y - broadcast_to(mean(y, 0, true), y.shape());
}

Tensor batch_standardize(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() != 2 || x.size(0) < 2)
    throw ShapeError("batch_norm: expected N×D with N >= 2, got " + to_string(x.shape()));
  const Shape d{1, x.size(1)};
  if (gain.shape() != Shape{x.size(1)} || bias.shape() != Shape{x.size(1)})
    throw ShapeError("batch_norm: affine parameters must have shape " + to_string(Shape{x.size(1)}));
  const Tensor centred = x - broadcast_to(mean(x, 0, true), x.shape());
  const Tensor inv_std = pow(add_scalar(mean_all(centred * centred), eps), -0.5);
  const Tensor y = centred * broadcast_to(reshape(inv_std, {1, 1}), x.shape());
  return y * broadcast_to(reshape(gain, d), x.shape()) + broadcast_to(reshape(bias, d), x.shape());
}

namespace {

void check_clip(const Tensor& x, const char* op) {
  if (x.rank() != 5) throw ShapeError(std::string(op) + ": expected N×C×T×H×W input, got " + to_string(x.shape()));
}

void add_bias_rows(std::span<double> out, std::span<const double> bias, std::size_t plane) {
  for (std::size_t c = 0; c < bias.size(); ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] += bias[c];
}

void accumulate_bias_grad(std::span<double> gb, std::span<const double> g, std::size_t plane) {
  for (std::size_t c = 0; c < gb.size(); ++c) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += g[c * plane + p];
    gb[c] += acc;
  }
}

}  // namespace

Tensor conv_spatial(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad) {
  check_clip(x, "conv_spatial");
  const auto& s = x.shape();
  const auto& ws = weight.shape();
  if (ws.size() != 4 || ws[1] != s[1] || bias.shape() != Shape{ws[0]})
    throw ShapeError("conv_spatial: weight " + to_string(ws) + " / bias " + to_string(bias.shape()) +
                     " incompatible with input " + to_string(s));
  if (stride == 0) throw ShapeError("conv_spatial: stride must be positive");
  kernels::SpatialGeometry g{s[1], s[2], s[3], s[4], ws[2], ws[3], stride, pad};
  if (s[3] + 2 * pad < ws[2] || s[4] + 2 * pad < ws[3])
    throw ShapeError("conv_spatial: output extent < 1 for input " + to_string(s) + " kernel " + to_string(ws));
  const std::size_t n = s[0], cout = ws[0], rows = g.col_rows(), cols = g.col_cols();
  const std::size_t in_size = s[1] * s[2] * s[3] * s[4], out_size = cout * cols;
  const bool record = detail::will_record({x.node(), weight.node(), bias.node()});

  std::vector<double> out(n * out_size);
  std::vector<double> saved(record ? n * rows * cols : 0);
  std::vector<double> scratch(record ? 0 : rows * cols);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> col = record ? std::span<double>(saved).subspan(i * rows * cols, rows * cols) : std::span<double>(scratch);
    kernels::im2col_spatial(g, x.values().subspan(i * in_size, in_size), col);
    auto out_i = std::span<double>(out).subspan(i * out_size, out_size);
    kernels::gemm({Trans::No, Trans::No, cout, cols, rows, false}, weight.values(), col, out_i);
    add_bias_rows(out_i, bias.values(), cols);
  }
  Shape out_shape{n, cout, s[2], g.out_h(), g.out_w()};
  NodePtr px = x.node(), pw = weight.node(), pb = bias.node();
  return make_result("conv_spatial", std::move(out_shape), std::move(out), {px, pw, pb},
                     [px, pw, pb, g, n, cout, rows, cols, in_size, out_size, saved = std::move(saved)](std::span<const double> grad) {
                       std::vector<double> dcol(px->requires_grad ? rows * cols : 0);
                       for (std::size_t i = 0; i < n; ++i) {
                         const auto g_i = grad.subspan(i * out_size, out_size);
                         const auto col = std::span<const double>(saved).subspan(i * rows * cols, rows * cols);
                         if (pw->requires_grad)
                           kernels::gemm({Trans::No, Trans::Yes, cout, rows, cols, true}, g_i, col, pw->grad_buffer());
                         if (pb->requires_grad) accumulate_bias_grad(pb->grad_buffer(), g_i, cols);
                         if (px->requires_grad) {
                           kernels::gemm({Trans::Yes, Trans::No, rows, cols, cout, false}, pw->value, g_i, dcol);
                           kernels::col2im_spatial(g, dcol, px->grad_buffer().subspan(i * in_size, in_size));
                         }
                       }
                     });
}

Tensor conv_temporal(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad) {
  check_clip(x, "conv_temporal");
  const auto& s = x.shape();
  const auto& ws = weight.shape();
  if (ws.size() != 3 || ws[1] != s[1] || bias.shape() != Shape{ws[0]})
    throw ShapeError("conv_temporal: weight " + to_string(ws) + " / bias " + to_string(bias.shape()) +
                     " incompatible with input " + to_string(s));
  if (stride == 0) throw ShapeError("conv_temporal: stride must be positive");
  if (s[2] + 2 * pad < ws[2])
    throw ShapeError("conv_temporal: output extent < 1 for input " + to_string(s) + " kernel " + to_string(ws));
  kernels::TemporalGeometry g{s[1], s[2], s[3] * s[4], ws[2], stride, pad};
  const std::size_t n = s[0], cout = ws[0], rows = g.col_rows(), cols = g.col_cols();
  const std::size_t in_size = s[1] * s[2] * s[3] * s[4], out_size = cout * cols;
  // A 1-tap, stride-1 kernel reads the input directly as its column matrix.
  const bool pointwise = ws[2] == 1 && stride == 1 && pad == 0;
  const bool record = detail::will_record({x.node(), weight.node(), bias.node()});

  std::vector<double> out(n * out_size);
  std::vector<double> saved(record && !pointwise ? n * rows * cols : 0);
  std::vector<double> scratch(!record && !pointwise ? rows * cols : 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> col;
    if (pointwise) {
      col = x.values().subspan(i * in_size, in_size);
    } else {
      std::span<double> dst = record ? std::span<double>(saved).subspan(i * rows * cols, rows * cols) : std::span<double>(scratch);
      kernels::im2col_temporal(g, x.values().subspan(i * in_size, in_size), dst);
      col = dst;
    }
    auto out_i = std::span<double>(out).subspan(i * out_size, out_size);
    kernels::gemm({Trans::No, Trans::No, cout, cols, rows, false}, weight.values(), col, out_i);
    add_bias_rows(out_i, bias.values(), cols);
  }
  Shape out_shape{n, cout, g.out_len(), s[3], s[4]};
  NodePtr px = x.node(), pw = weight.node(), pb = bias.node();
  return make_result("conv_temporal", std::move(out_shape), std::move(out), {px, pw, pb},
                     [px, pw, pb, g, n, cout, rows, cols, in_size, out_size, pointwise,
                      saved = std::move(saved)](std::span<const double> grad) {
                       std::vector<double> dcol(px->requires_grad && !pointwise ? rows * cols : 0);
                       for (std::size_t i = 0; i < n; ++i) {
                         const auto g_i = grad.subspan(i * out_size, out_size);
                         const auto col = pointwise ? std::span<const double>(px->value).subspan(i * in_size, in_size)
                                                    : std::span<const double>(saved).subspan(i * rows * cols, rows * cols);
                         if (pw->requires_grad)
                           kernels::gemm({Trans::No, Trans::Yes, cout, rows, cols, true}, g_i, col, pw->grad_buffer());
                         if (pb->requires_grad) accumulate_bias_grad(pb->grad_buffer(), g_i, cols);
                         if (px->requires_grad) {
                           auto gx = px->grad_buffer().subspan(i * in_size, in_size);
                           if (pointwise) {
                             kernels::gemm({Trans::Yes, Trans::No, rows, cols, cout, true}, pw->value, g_i, gx);
                           } else {
                             kernels::gemm({Trans::Yes, Trans::No, rows, cols, cout, false}, pw->value, g_i, dcol);
                             kernels::col2im_temporal(g, dcol, gx);
                           }
                         }
                       }
                     });
}

Tensor frame_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_clip(x, "frame_norm");
  const auto& s = x.shape();
  const std::size_t n = s[0], c = s[1], t = s[2], plane = s[3] * s[4];
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c})
    throw ShapeError("frame_norm: gain/bias must be (" + std::to_string(c) + ") for input " + to_string(s));
  const std::size_t groups = n * t, group_size = c * plane;
  const auto xv = x.values(), gv = gain.values(), bv = bias.values();
  std::vector<double> out(xv.size()), xhat(xv.size()), rstd(groups);
  // element (i, ch, f, p) lives at ((i*c + ch)*t + f)*plane + p
  auto at = [&](std::size_t i, std::size_t ch, std::size_t f) { return ((i * c + ch) * t + f) * plane; };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < t; ++f) {
      double mu = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) mu += xv[at(i, ch, f) + p];
      mu /= static_cast<double>(group_size);
      double var = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = xv[at(i, ch, f) + p] - mu;
          var += d * d;
        }
      var /= static_cast<double>(group_size);
      const double r = 1.0 / std::sqrt(var + eps);
      rstd[i * t + f] = r;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t e = at(i, ch, f) + p;
          xhat[e] = (xv[e] - mu) * r;
          out[e] = gv[ch] * xhat[e] + bv[ch];
        }
    }
  NodePtr px = x.node(), pg = gain.node(), pb = bias.node();
  return make_result("frame_norm", s, std::move(out), {px, pg, pb},
                     [px, pg, pb, n, c, t, plane, group_size, xhat = std::move(xhat),
                      rstd = std::move(rstd)](std::span<const double> g) {
                       auto at = [&](std::size_t i, std::size_t ch, std::size_t f) { return ((i * c + ch) * t + f) * plane; };
                       const auto& gv = pg->value;
                       if (pg->requires_grad || pb->requires_grad) {
                         auto gg = pg->requires_grad ? pg->grad_buffer() : std::span<double>{};
                         auto gb = pb->requires_grad ? pb->grad_buffer() : std::span<double>{};
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t ch = 0; ch < c; ++ch)
                             for (std::size_t f = 0; f < t; ++f)
                               for (std::size_t p = 0; p < plane; ++p) {
                                 const std::size_t e = at(i, ch, f) + p;
                                 if (!gg.empty()) gg[ch] += g[e] * xhat[e];
                                 if (!gb.empty()) gb[ch] += g[e];
                               }
                       }
                       if (!px->requires_grad) return;
                       auto gx = px->grad_buffer();
                       const double inv = 1.0 / static_cast<double>(group_size);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t f = 0; f < t; ++f) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t ch = 0; ch < c; ++ch)
                             for (std::size_t p = 0; p < plane; ++p) {
                               const std::size_t e = at(i, ch, f) + p;
                               const double d = g[e] * gv[ch];
                               m1 += d;
                               m2 += d * xhat[e];
                             }
                           m1 *= inv;
                           m2 *= inv;
                           const double r = rstd[i * t + f];
                           for (std::size_t ch = 0; ch < c; ++ch)
                             for (std::size_t p = 0; p < plane; ++p) {
                               const std::size_t e = at(i, ch, f) + p;
                               gx[e] += r * (g[e] * gv[ch] - m1 - xhat[e] * m2);
                             }
                         }
                     });
}

namespace {

Tensor flatten_spatial(const Tensor& feat, const char* op) {
  const auto& s = feat.shape();
  if (s.size() < 3) throw ShapeError(std::string(op) + ": need (..., H, W), got " + to_string(s));
  Shape flat(s.begin(), s.end() - 2);
  flat.push_back(s[s.size() - 2] * s.back());
  return reshape(feat, std::move(flat));
}

}  // namespace

Tensor spatial_pool(const Tensor& feat) { return mean(flatten_spatial(feat, "spatial_pool"), -1); }
Tensor spatial_max_pool(const Tensor& feat) { return max(flatten_spatial(feat, "spatial_max_pool"), -1); }

Tensor temporal_avg_pool(const Tensor& h) {
  if (h.rank() < 1) throw ShapeError("temporal_avg_pool: scalar input");
  return mean(h, -1);
}

}  // namespace stica::nn
