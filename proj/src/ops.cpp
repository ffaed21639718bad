#include "stica/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "stica/detail/node.hpp"
#include "stica/kernels.hpp"

namespace stica {

using detail::make_result;
using detail::NodePtr;

namespace {

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const long r = static_cast<long>(rank);
  const long a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

// outer × len × inner view of a shape around one axis.
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

// Index mapping for trailing-aligned broadcasting of a and b into out.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // per out axis, 0 where broadcast
  bool same = false;
  bool b_scalar = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  p.same = a == b;
  p.b_scalar = numel(b) == 1 && b.size() <= a.size();
  const std::size_t rank = std::max(a.size(), b.size());
  p.out.assign(rank, 1);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  const auto sa = contiguous_strides(a), sb = contiguous_strides(b);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ia = i + a.size(), ib = i + b.size();
    const std::size_t ea = ia >= rank ? a[ia - rank] : 1;
    const std::size_t eb = ib >= rank ? b[ib - rank] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) + " do not broadcast");
    p.out[i] = std::max(ea, eb);
    if (ia >= rank && ea != 1) p.stride_a[i] = sa[ia - rank];
    if (ib >= rank && eb != 1) p.stride_b[i] = sb[ib - rank];
  }
  return p;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <class Fn>
void for_each_broadcast(const Broadcast& p, Fn&& fn) {
  const std::size_t n = numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  if (p.b_scalar) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, std::size_t{0});
    return;
  }
  const std::size_t rank = p.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < p.out[d]) {
        ia += p.stride_a[d];
        ib += p.stride_b[d];
        break;
      }
      ia -= p.stride_a[d] * (p.out[d] - 1);
      ib -= p.stride_b[d] * (p.out[d] - 1);
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp kind, const char* name) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(numel(plan.out));
  bool bad = false;
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
    switch (kind) {
      case BinOp::Add: out[o] = av[i] + bv[j]; break;
      case BinOp::Sub: out[o] = av[i] - bv[j]; break;
      case BinOp::Mul: out[o] = av[i] * bv[j]; break;
      case BinOp::Div:
        if (bv[j] == 0.0) bad = true;
        out[o] = av[i] / bv[j];
        break;
    }
  });
  if (bad) detail::note_nonfinite(name);
  NodePtr pa = a.node(), pb = b.node();
  Shape out_shape = plan.out;
  return make_result(name, std::move(out_shape), std::move(out), {pa, pb},
                     [pa, pb, plan = std::move(plan), kind](std::span<const double> g) {
                       const auto av = std::span<const double>(pa->value);
                       const auto bv = std::span<const double>(pb->value);
                       std::span<double> ga = pa->requires_grad ? pa->grad_buffer() : std::span<double>{};
                       std::span<double> gb = pb->requires_grad ? pb->grad_buffer() : std::span<double>{};
                       for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
                         switch (kind) {
                           case BinOp::Add:
                             if (!ga.empty()) ga[i] += g[o];
                             if (!gb.empty()) gb[j] += g[o];
                             break;
                           case BinOp::Sub:
                             if (!ga.empty()) ga[i] += g[o];
                             if (!gb.empty()) gb[j] -= g[o];
                             break;
                           case BinOp::Mul:
                             if (!ga.empty()) ga[i] += g[o] * bv[j];
                             if (!gb.empty()) gb[j] += g[o] * av[i];
                             break;
                           case BinOp::Div:
                             if (!ga.empty()) ga[i] += g[o] / bv[j];
                             if (!gb.empty()) gb[j] -= g[o] * av[i] / (bv[j] * bv[j]);
                             break;
                         }
                       });
                     });
}

// Elementwise unary op with derivative computed from (input, output).
template <class F, class D>
Tensor unary(const Tensor& x, const char* name, F f, D dfdx) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  NodePtr px = x.node();
  const bool record = detail::will_record({px});
  auto result = make_result(name, x.shape(), std::move(out), {px}, nullptr);
  if (record) {
    std::weak_ptr<detail::Node> self = result.node();
    result.node()->backward = [px, self, dfdx](std::span<const double> g) {
      auto out_node = self.lock();
      auto gx = px->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * dfdx(px->value[i], out_node->value[i]);
    };
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div, "div"); }

Tensor neg(const Tensor& x) {
  return unary(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary(x, "mul_scalar", [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values())
    if (!(v > 0.0)) {
      detail::note_nonfinite("log");
      break;
    }
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor pow(const Tensor& x, double exponent) {
  const bool integral = std::floor(exponent) == exponent;
  for (double v : x.values())
    if ((v < 0.0 && !integral) || (v == 0.0 && exponent < 0.0)) {
      detail::note_nonfinite("pow");
      break;
    }
  return unary(
      x, "pow", [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440, inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v); });
}

namespace {

enum class Reduce { Sum, Mean, Max };

Tensor reduce(const Tensor& x, int axis_arg, bool keepdim, Reduce kind, const char* name) {
  const auto& shape = x.shape();
  const std::size_t axis = norm_axis(axis_arg, shape.size(), name);
  const auto v = axis_view(shape, axis);
  if (v.len == 0) throw ShapeError(std::string(name) + ": empty axis");
  const auto xv = x.values();
  std::vector<double> out(v.outer * v.inner);
  std::vector<std::size_t> argmax;
  if (kind == Reduce::Max) argmax.assign(out.size(), 0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double acc = kind == Reduce::Max ? xv[base] : 0.0;
      std::size_t best = 0;
      for (std::size_t l = 0; l < v.len; ++l) {
        const double e = xv[base + l * v.inner];
        if (kind == Reduce::Max) {
          if (e > acc) {
            acc = e;
            best = l;
          }
        } else {
          acc += e;
        }
      }
      if (kind == Reduce::Mean) acc /= static_cast<double>(v.len);
      out[o * v.inner + i] = acc;
      if (kind == Reduce::Max) argmax[o * v.inner + i] = best;
    }
  Shape out_shape = shape;
  if (keepdim) out_shape[axis] = 1;
  else out_shape.erase(out_shape.begin() + static_cast<long>(axis));
  NodePtr px = x.node();
  return make_result(name, std::move(out_shape), std::move(out), {px},
                     [px, v, kind, argmax = std::move(argmax)](std::span<const double> g) {
                       auto gx = px->grad_buffer();
                       const double scale = kind == Reduce::Mean ? 1.0 / static_cast<double>(v.len) : 1.0;
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t i = 0; i < v.inner; ++i) {
                           const std::size_t base = o * v.len * v.inner + i;
                           const double go = g[o * v.inner + i];
                           if (kind == Reduce::Max) {
                             gx[base + argmax[o * v.inner + i] * v.inner] += go;
                           } else {
                             for (std::size_t l = 0; l < v.len; ++l) gx[base + l * v.inner] += go * scale;
                           }
                         }
                     });
}

}  // namespace

Tensor sum(const Tensor& x, int axis, bool keepdim) { return reduce(x, axis, keepdim, Reduce::Sum, "sum"); }
Tensor mean(const Tensor& x, int axis, bool keepdim) { return reduce(x, axis, keepdim, Reduce::Mean, "mean"); }
Tensor max(const Tensor& x, int axis, bool keepdim) { return reduce(x, axis, keepdim, Reduce::Max, "max"); }

Tensor sum_all(const Tensor& x) { return sum(reshape(x, {x.numel()}), 0); }
Tensor mean_all(const Tensor& x) { return mean(reshape(x, {x.numel()}), 0); }

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  auto plan = plan_broadcast(shape, x.shape(), "broadcast_to");
  if (plan.out != shape)
    throw ShapeError("broadcast_to: " + to_string(x.shape()) + " cannot expand to " + to_string(shape));
  const auto xv = x.values();
  std::vector<double> out(numel(shape));
  for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t j) { out[o] = xv[j]; });
  NodePtr px = x.node();
  return make_result("broadcast_to", shape, std::move(out), {px}, [px, plan = std::move(plan)](std::span<const double> g) {
    auto gx = px->grad_buffer();
    for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t j) { gx[j] += g[o]; });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: " + to_string(x.shape()) + " has " + std::to_string(x.numel()) + " elements, target " +
                     to_string(shape) + " has " + std::to_string(numel(shape)));
  const auto xv = x.values();
  NodePtr px = x.node();
  return make_result("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {px},
                     [px](std::span<const double> g) {
                       auto gx = px->grad_buffer();
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& in = x.shape();
  const std::size_t rank = in.size();
  if (order.size() != rank) throw ShapeError("permute: order rank mismatch for " + to_string(in));
  std::vector<bool> used(rank, false);
  for (auto a : order) {
    if (a >= rank || used[a]) throw ShapeError("permute: invalid axis order for " + to_string(in));
    used[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in[order[i]];
  const auto in_strides = contiguous_strides(in);
  std::vector<std::size_t> src_stride(rank);  // input stride for each output axis
  for (std::size_t i = 0; i < rank; ++i) src_stride[i] = in_strides[order[i]];
  const std::size_t n = x.numel();
  std::vector<std::size_t> gather(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < n; ++o) {
      gather[o] = src;
      for (std::size_t d = rank; d-- > 0;) {
        if (++idx[d] < out_shape[d]) {
          src += src_stride[d];
          break;
        }
        src -= src_stride[d] * (out_shape[d] - 1);
        idx[d] = 0;
      }
    }
  }
  const auto xv = x.values();
  std::vector<double> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = xv[gather[o]];
  NodePtr px = x.node();
  return make_result("permute", std::move(out_shape), std::move(out), {px},
                     [px, gather = std::move(gather)](std::span<const double> g) {
                       auto gx = px->grad_buffer();
                       for (std::size_t o = 0; o < gather.size(); ++o) gx[gather[o]] += g[o];
                     });
}

Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (axis_a >= order.size() || axis_b >= order.size())
    throw ShapeError("transpose: axes out of range for " + to_string(x.shape()));
  std::swap(order[axis_a], order[axis_b]);
  return permute(x, order);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) throw ShapeError("slice: axis out of range for " + to_string(shape));
  if (begin >= end || end > shape[axis])
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of " + to_string(shape));
  const auto v = axis_view(shape, axis);
  const std::size_t len = end - begin;
  const auto xv = x.values();
  std::vector<double> out(v.outer * len * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(xv.begin() + static_cast<long>((o * v.len + begin) * v.inner), len * v.inner,
                out.begin() + static_cast<long>(o * len * v.inner));
  Shape out_shape = shape;
  out_shape[axis] = len;
  NodePtr px = x.node();
  return make_result("slice", std::move(out_shape), std::move(out), {px}, [px, v, begin, len](std::span<const double> g) {
    auto gx = px->grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o) {
      double* dst = gx.data() + (o * v.len + begin) * v.inner;
      const double* src = g.data() + o * len * v.inner;
      for (std::size_t i = 0; i < len * v.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range for " + to_string(out_shape));
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat: rank mismatch " + to_string(s) + " vs " + to_string(parts[0].shape()));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != parts[0].shape()[d])
        throw ShapeError("concat: shapes " + to_string(s) + " and " + to_string(parts[0].shape()) + " differ off-axis");
    lens.push_back(s[axis]);
    out_shape[axis] += s[axis];
    nodes.push_back(p.node());
  }
  const auto v = axis_view(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy_n(pv.begin() + static_cast<long>(o * lens[k] * v.inner), lens[k] * v.inner,
                  out.begin() + static_cast<long>((o * v.len + offset) * v.inner));
    offset += lens[k];
  }
  return make_result("concat", std::move(out_shape), std::move(out), nodes,
                     [nodes, lens, v](std::span<const double> g) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                         if (nodes[k]->requires_grad) {
                           auto gk = nodes[k]->grad_buffer();
                           for (std::size_t o = 0; o < v.outer; ++o) {
                             const double* src = g.data() + (o * v.len + offset) * v.inner;
                             double* dst = gk.data() + o * lens[k] * v.inner;
                             for (std::size_t i = 0; i < lens[k] * v.inner; ++i) dst[i] += src[i];
                           }
                         }
                         offset += lens[k];
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2)
    throw ShapeError("matmul: operands need rank >= 2, got " + to_string(sa) + " and " + to_string(sb));
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  if (sb[sb.size() - 2] != k)
    throw ShapeError("matmul: inner dimensions differ in " + to_string(sa) + " x " + to_string(sb));
  const std::size_t n = sb.back();
  const bool shared_b = sb.size() == 2;
  if (!shared_b && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())))
    throw ShapeError("matmul: batch dimensions differ in " + to_string(sa) + " x " + to_string(sb));
  const std::size_t batch = numel(sa) / (m * k);
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n);
  using kernels::GemmArgs;
  using kernels::Trans;
  if (shared_b) {
    kernels::gemm({Trans::No, Trans::No, batch * m, n, k, false}, a.values(), b.values(), out);
  } else {
    for (std::size_t i = 0; i < batch; ++i)
      kernels::gemm({Trans::No, Trans::No, m, n, k, false}, a.values().subspan(i * m * k, m * k),
                    b.values().subspan(i * k * n, k * n), std::span<double>(out).subspan(i * m * n, m * n));
  }
  NodePtr pa = a.node(), pb = b.node();
  return make_result("matmul", std::move(out_shape), std::move(out), {pa, pb},
                     [pa, pb, batch, m, n, k, shared_b](std::span<const double> g) {
                       if (shared_b) {
                         if (pa->requires_grad)
                           kernels::gemm({Trans::No, Trans::Yes, batch * m, k, n, true}, g, pb->value, pa->grad_buffer());
                         if (pb->requires_grad)
                           kernels::gemm({Trans::Yes, Trans::No, k, n, batch * m, true}, pa->value, g, pb->grad_buffer());
                         return;
                       }
                       for (std::size_t i = 0; i < batch; ++i) {
                         const auto gi = g.subspan(i * m * n, m * n);
                         if (pa->requires_grad)
                           kernels::gemm({Trans::No, Trans::Yes, m, k, n, true}, gi,
                                         std::span<const double>(pb->value).subspan(i * k * n, k * n),
                                         pa->grad_buffer().subspan(i * m * k, m * k));
                         if (pb->requires_grad)
                           kernels::gemm({Trans::Yes, Trans::No, k, n, m, true},
                                         std::span<const double>(pa->value).subspan(i * m * k, m * k), gi,
                                         pb->grad_buffer().subspan(i * k * n, k * n));
                       }
                     });
}

namespace {

void require_finite(const Tensor& x, const char* op) {
  for (double v : x.values())
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace

Tensor softmax(const Tensor& x, int axis_arg) {
  require_finite(x, "softmax");
  const std::size_t axis = norm_axis(axis_arg, x.rank(), "softmax");
  const auto v = axis_view(x.shape(), axis);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double mx = xv[base];
      for (std::size_t l = 1; l < v.len; ++l) mx = std::max(mx, xv[base + l * v.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) total += out[base + l * v.inner] = std::exp(xv[base + l * v.inner] - mx);
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] /= total;
    }
  NodePtr px = x.node();
  auto result = make_result("softmax", x.shape(), std::move(out), {px}, nullptr);
  if (result.requires_grad()) {
    std::weak_ptr<detail::Node> self = result.node();
    result.node()->backward = [px, self, v](std::span<const double> g) {
      const auto& y = self.lock()->value;
      auto gx = px->grad_buffer();
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const std::size_t base = o * v.len * v.inner + i;
          double dot = 0.0;
          for (std::size_t l = 0; l < v.len; ++l) dot += g[base + l * v.inner] * y[base + l * v.inner];
          for (std::size_t l = 0; l < v.len; ++l) {
            const std::size_t e = base + l * v.inner;
            gx[e] += y[e] * (g[e] - dot);
          }
        }
    };
  }
  return result;
}

Tensor log_softmax(const Tensor& x, int axis_arg) {
  require_finite(x, "log_softmax");
  const std::size_t axis = norm_axis(axis_arg, x.rank(), "log_softmax");
  const auto v = axis_view(x.shape(), axis);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double mx = xv[base];
      for (std::size_t l = 1; l < v.len; ++l) mx = std::max(mx, xv[base + l * v.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) total += std::exp(xv[base + l * v.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] = xv[base + l * v.inner] - lse;
    }
  NodePtr px = x.node();
  auto result = make_result("log_softmax", x.shape(), std::move(out), {px}, nullptr);
  if (result.requires_grad()) {
    std::weak_ptr<detail::Node> self = result.node();
    result.node()->backward = [px, self, v](std::span<const double> g) {
      const auto& y = self.lock()->value;
      auto gx = px->grad_buffer();
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const std::size_t base = o * v.len * v.inner + i;
          double gsum = 0.0;
          for (std::size_t l = 0; l < v.len; ++l) gsum += g[base + l * v.inner];
          for (std::size_t l = 0; l < v.len; ++l) {
            const std::size_t e = base + l * v.inner;
            gx[e] += g[e] - std::exp(y[e]) * gsum;
          }
        }
    };
  }
  return result;
}

Tensor masked_softmax(const Tensor& scores, std::span<const std::uint8_t> key_mask) {
  const auto& s = scores.shape();
  if (s.size() < 2) throw ShapeError("masked_softmax: scores need rank >= 2, got " + to_string(s));
  const std::size_t batch = s[0], keys = s.back();
  if (key_mask.size() != batch * keys)
    throw ShapeError("masked_softmax: mask has " + std::to_string(key_mask.size()) + " entries, scores " + to_string(s) +
                     " need " + std::to_string(batch * keys));
  for (std::size_t b = 0; b < batch; ++b)
    if (std::none_of(key_mask.begin() + static_cast<long>(b * keys), key_mask.begin() + static_cast<long>((b + 1) * keys),
                     [](std::uint8_t m) { return m != 0; }))
      throw ShapeError("masked_softmax: every key of batch entry " + std::to_string(b) + " is masked");
  const std::size_t rows_per_batch = scores.numel() / (batch * keys);
  const auto xv = scores.values();
  std::vector<double> out(xv.size(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint8_t* mask = key_mask.data() + b * keys;
    for (std::size_t r = 0; r < rows_per_batch; ++r) {
      const std::size_t base = (b * rows_per_batch + r) * keys;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < keys; ++j)
        if (mask[j]) {
          if (!std::isfinite(xv[base + j])) throw NumericError("masked_softmax: non-finite input");
          mx = std::max(mx, xv[base + j]);
        }
      double total = 0.0;
      for (std::size_t j = 0; j < keys; ++j)
        if (mask[j]) total += out[base + j] = std::exp(xv[base + j] - mx);
      for (std::size_t j = 0; j < keys; ++j)
        if (mask[j]) out[base + j] /= total;
    }
  }
  NodePtr px = scores.node();
  auto result = make_result("masked_softmax", s, std::move(out), {px}, nullptr);
  if (result.requires_grad()) {
    std::weak_ptr<detail::Node> self = result.node();
    result.node()->backward = [px, self, keys](std::span<const double> g) {
      const auto& y = self.lock()->value;
      auto gx = px->grad_buffer();
      const std::size_t rows = y.size() / keys;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * keys;
        double dot = 0.0;
        for (std::size_t j = 0; j < keys; ++j) dot += g[base + j] * y[base + j];
        for (std::size_t j = 0; j < keys; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
      }
    };
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto& s = x.shape();
  if (s.empty()) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = s.back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw ShapeError("layer_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                     " must be (" + std::to_string(d) + ")");
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values(), gv = gain.values(), bv = bias.values();
  std::vector<double> out(xv.size()), xhat(xv.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * rstd[r];
      out[r * d + j] = gv[j] * xhat[r * d + j] + bv[j];
    }
  }
  NodePtr px = x.node(), pg = gain.node(), pb = bias.node();
  return make_result("layer_norm", s, std::move(out), {px, pg, pb},
                     [px, pg, pb, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](std::span<const double> g) {
                       const auto& gv = pg->value;
                       if (pg->requires_grad || pb->requires_grad) {
                         auto gg = pg->requires_grad ? pg->grad_buffer() : std::span<double>{};
                         auto gb = pb->requires_grad ? pb->grad_buffer() : std::span<double>{};
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) {
                             if (!gg.empty()) gg[j] += g[r * d + j] * xhat[r * d + j];
                             if (!gb.empty()) gb[j] += g[r * d + j];
                           }
                       }
                       if (!px->requires_grad) return;
                       auto gx = px->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dx = 0.0, mean_dx_xhat = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dxh = g[r * d + j] * gv[j];
                           mean_dx += dxh;
                           mean_dx_xhat += dxh * xhat[r * d + j];
                         }
                         mean_dx /= static_cast<double>(d);
                         mean_dx_xhat /= static_cast<double>(d);
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dxh = g[r * d + j] * gv[j];
                           gx[r * d + j] += rstd[r] * (dxh - mean_dx - xhat[r * d + j] * mean_dx_xhat);
                         }
                       }
                     });
}

}  // namespace stica
