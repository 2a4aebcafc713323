#include "seqbench/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "seqbench/common.hpp"

namespace seqbench {

GradCheckReport check_gradients(
    const std::function<Tensor<double>(Tape<double>*)>& loss_fn,
    const std::vector<std::pair<std::string, Tensor<double>>>& params,
    const GradCheckOptions& options) {
  for (const auto& [name, p] : params) {
    if (!p.requires_grad()) {
      throw ContractError("check_gradients: parameter '" + name +
                          "' does not require gradients");
    }
    p.zero_grad();
  }

  Tape<double> tape;
  Tensor<double> loss = loss_fn(&tape);
  tape.run_backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) {
    if (p.has_grad()) {
      auto g = p.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
  }

  GradCheckReport report;
  const double h = options.step;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const auto& name = params[pi].first;
    const Tensor<double>& p = params[pi].second;
    auto vals = p.values_mut();
    const int64_t n = p.numel();
    int64_t stride = 1;
    if (options.max_elements_per_param > 0 && n > options.max_elements_per_param) {
      stride = (n + options.max_elements_per_param - 1) / options.max_elements_per_param;
    }
    for (int64_t i = 0; i < n; i += stride) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double lp = loss_fn(nullptr).item();
      vals[i] = saved - h;
      const double lm = loss_fn(nullptr).item();
      vals[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[pi][static_cast<size_t>(i)];
      ++report.elements_checked;
      if (std::fabs(a - numeric) <= options.abs_tol) continue;
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= options.tol;
  return report;
}

}  // namespace seqbench
