#include "stica/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace stica {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double eps) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  for (auto& x : inputs) {
    if (!x.requires_grad()) throw ConfigError("grad_check: every input must require a gradient");
    x.zero_grad();
  }
  f().backward();

  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& x = inputs[i];
    const std::vector<double> analytic = x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                                      : std::vector<double>(x.numel(), 0.0);
    auto values = x.mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double original = values[j];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard no_grad;
        values[j] = original + eps;
        plus = f().item();
        values[j] = original - eps;
        minus = f().item();
      }
      values[j] = original;
      ++report.entries;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        report.nonfinite.push_back("input[" + std::to_string(i) + "][" + std::to_string(j) + "]");
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = std::abs(analytic[j] - numeric) / std::max(1e-12, std::abs(analytic[j]) + std::abs(numeric));
      if (err > report.max_relative_error || report.entries == 1) {
        report.max_relative_error = std::max(report.max_relative_error, err);
        report.worst_input = i;
        report.worst_entry = j;
        report.worst_analytic = analytic[j];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace stica
