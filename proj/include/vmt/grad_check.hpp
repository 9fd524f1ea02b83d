#pragma once

#include <functional>

#include "vmt/tensor.hpp"

namespace vmt {

struct FdReport {
  bool pass = false;
  double max_rel_err = 0.0;
  int64_t worst_coord = -1;
  double analytic_at_worst = 0.0;
  double estimate_at_worst = 0.0;
};

// Central-difference check of an analytic gradient. Relative error per
// coordinate is |analytic - estimate| / max(|analytic|, |estimate|, 1e-8);
// absolute differences under 1e-9 are below the resolution of the quotient
// and never count. The report carries the worst coordinate.
FdReport finite_diff_check(const std::function<double(const Tensor&)>& fn, const Tensor& point,
                           const Tensor& analytic_grad, double step, double tol);

}  // namespace vmt
