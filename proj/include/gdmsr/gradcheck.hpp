#pragma once

#include <functional>
#include <span>
#include <string>

#include "gdmsr/tensor.hpp"

namespace gdmsr::num {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int64_t coords_checked = 0;
  std::string worst;  // "param[idx]: analytic=..., fd=..."
};

// Central-difference check of the loss built by `build_loss` (which must be
// deterministic; run with dropout disabled). Mutates and restores parameter
// values in place. Relative error uses max(|fd|, |analytic|, 1e-4) as the
// denominator so near-zero gradients are compared absolutely.
GradCheckResult grad_check(std::span<Parameter* const> params,
                           const std::function<Tensor(Tape&)>& build_loss, double step);

}  // namespace gdmsr::num
