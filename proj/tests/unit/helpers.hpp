#pragma once

#include <vector>

#include "stica/rng.hpp"
#include "stica/tensor.hpp"

namespace stica::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

// Uniform in ±[margin, hi], keeping entries away from the relu kink.
inline Tensor away_from_zero(Shape shape, Rng& rng, double margin = 0.05, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& e : v) {
    const double mag = rng.uniform(margin, hi);
    e = rng.bernoulli(0.5) ? mag : -mag;
  }
  return Tensor(std::move(shape), std::move(v), true);
}

// Fixed random weights so a scalar reduction of a tensor has a generic,
// non-degenerate gradient.
inline Tensor probe_weights(const Shape& shape, std::uint64_t seed = 99) {
  Rng rng(seed);
  return random_tensor(shape, rng, -1.0, 1.0, false);
}

}  // namespace stica::testing
