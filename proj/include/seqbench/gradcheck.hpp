#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "seqbench/tape.hpp"
#include "seqbench/tensor.hpp"

namespace seqbench {

struct GradCheckOptions {
  double tol = 1e-4;
  double step = 1e-5;
  // Differences at or below this pass outright. Central differences carry
  // eps*|loss|/step of rounding noise (~1e-11 here), which the relative test
  // would otherwise flag on elements whose true gradient is zero.
  double abs_tol = 1e-9;
  // 0 checks every element; otherwise an evenly strided subsample per
  // parameter (element 0 always included).
  int64_t max_elements_per_param = 0;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  int64_t elements_checked = 0;
  std::string worst_param;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares tape gradients against central differences, always in double.
//
// loss_fn must rerun the same forward pass from the parameters' current
// values: recording when given a tape, plain evaluation when given nullptr.
// Relative error per element is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport check_gradients(
    const std::function<Tensor<double>(Tape<double>*)>& loss_fn,
    const std::vector<std::pair<std::string, Tensor<double>>>& params,
    const GradCheckOptions& options = {});

}  // namespace seqbench
