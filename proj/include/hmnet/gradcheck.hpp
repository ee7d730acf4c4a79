#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <functional>
#include <vector>

#include "hmnet/optim.hpp"
#include "hmnet/tensor.hpp"

namespace hmnet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  bool passed = true;
};

/// Relative error with an absolute floor, so entries where both gradients are
/// ~0 do not blow up the ratio.
inline double gradient_rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares d f / d x from backward() against central differences.
///
/// `f` must rebuild its graph on every call and return a scalar that depends
/// on `x` (a leaf with requires_grad). Entries of x are perturbed in place and
/// restored. At most `max_entries` entries are probed, spread evenly; entries
/// flagged in `skip` are left alone.
inline GradCheckReport finite_diff_check(const std::function<Tensor()>& f, Tensor x,
                                         double step = 1e-5, double tolerance = 1e-4,
                                         std::size_t max_entries = static_cast<std::size_t>(-1),
                                         std::span<const std::uint8_t> skip = {}) {
  GradCheckReport report;
  x.zero_grad();
  Tensor loss = f();
  std::vector<double> analytic(x.numel(), 0.0);
  if (loss.requires_grad()) {
    backward(loss);
    if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());
  }
  x.zero_grad();

  const std::size_t n = x.numel();
  const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, std::min(n, max_entries)));
  auto values = x.mutable_values();
  for (std::size_t i = 0; i < n; i += stride) {
    if (!skip.empty() && skip[i]) continue;
    const double saved = values[i];
    values[i] = saved + step;
    const double up = f().item();
    values[i] = saved - step;
    const double down = f().item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double rel = gradient_rel_error(analytic[i], numeric);
    const double abs_err = std::abs(analytic[i] - numeric);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    ++report.checked;
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

/// Parameter overload: masked entries are pinned, so they are not probed.
inline GradCheckReport finite_diff_check(const std::function<Tensor()>& f, Parameter& p,
                                         double step = 1e-5, double tolerance = 1e-4,
                                         std::size_t max_entries = static_cast<std::size_t>(-1)) {
  std::span<const std::uint8_t> skip;
  if (p.mask) skip = *p.mask;
  return finite_diff_check(f, p.tensor, step, tolerance, max_entries, skip);
}

}  // namespace hmnet
