#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stica/tensor.hpp"

// Differentiable primitives. Binary elementwise operations broadcast by
// trailing-dimension alignment with size-1 expansion. Axis arguments accept
// negative values counted from the back.
namespace stica {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);
Tensor relu(const Tensor& x);  // subgradient 0 at 0
Tensor gelu(const Tensor& x);  // x·Φ(x) with the exact normal cdf

Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
Tensor max(const Tensor& x, int axis, bool keepdim = false);  // ties route to the first index
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b);
// Half-open range [begin, end) along one axis.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

// (...×m×k) · (k×n) or batched (...×m×k) · (...×k×n) with equal batch dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// Max-subtracted softmax; rejects non-finite input.
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

// Softmax over the last axis of scores shaped (B, ..., T) where key_mask is
// B×T (1 = attend). Masked keys get exactly zero weight, as if their logits
// were -inf.
Tensor masked_softmax(const Tensor& scores, std::span<const std::uint8_t> key_mask);

// Normalisation over the last axis with per-feature gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

}  // namespace stica
