#include "vmt/grad_check.hpp"

#include <cmath>
#include <string>

#include "vmt/errors.hpp"

namespace vmt {

FdReport finite_diff_check(const std::function<double(const Tensor&)>& fn, const Tensor& point,
                           const Tensor& analytic_grad, double step, double tol) {
  if (!point.same_shape(analytic_grad)) {
    throw ShapeError("finite_diff_check: gradient shape " + analytic_grad.shape_str() +
                     " does not match point shape " + point.shape_str());
  }
  if (!(step > 0.0)) throw ValueError("finite_diff_check: step must be positive");

  FdReport report;
  Tensor probe = point.detached();
  for (int64_t i = 0; i < point.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = fn(probe);
    probe[i] = saved - step;
    const double down = fn(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_check: non-finite value at probe coordinate " +
                         std::to_string(i));
    }
    const double estimate = (up - down) / (2.0 * step);
    const double analytic = analytic_grad[i];
    // Differences below the rounding noise of the central quotient itself
    // (one ulp of f over 2*step) carry no signal; treat them as a match.
    if (std::fabs(analytic - estimate) <= 1e-9) continue;
    const double denom = std::max({std::fabs(analytic), std::fabs(estimate), 1e-8});
    const double rel = std::fabs(analytic - estimate) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_coord = i;
      report.analytic_at_worst = analytic;
      report.estimate_at_worst = estimate;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace vmt
