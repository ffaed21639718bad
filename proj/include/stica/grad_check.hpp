#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stica/tensor.hpp"

namespace stica {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t entries = 0;
  std::size_t worst_input = 0;
  std::size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  // "input[i][j]" for each perturbed evaluation that was not finite.
  std::vector<std::string> nonfinite;
};

// Compares reverse-mode gradients of a scalar function against central
// differences. `f` must read `inputs` (leaf tensors with requires_grad) and
// return a scalar. Per entry the error is
//   |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double eps = 1e-6);

}  // namespace stica
