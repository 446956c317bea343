#pragma once

#include <cmath>
#include <functional>

#include "flowlab/model.hpp"
#include "flowlab/tensor.hpp"

namespace flowlab::testutil {

// Central finite difference of a scalar-valued function w.r.t. one entry of
// a tensor the function reads by reference.
inline double central_fd(const std::function<double()>& f, double& slot, double h = 1e-5) {
  const double saved = slot;
  slot = saved + h;
  const double up = f();
  slot = saved - h;
  const double down = f();
  slot = saved;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-8});
  return std::abs(got - want) / denom;
}

// |a - b| <= atol + rtol * max(|a|, |b|); atol absorbs finite-difference
// cancellation noise on near-zero gradients.
inline bool grad_close(double analytic, double fd, double rtol = 1e-4, double atol = 1e-8) {
  return std::abs(analytic - fd) <= atol + rtol * std::max(std::abs(analytic), std::abs(fd));
}

// Analytic-vs-FD gradient check over every scalar of a ParamSet; returns the
// worst relative error (entries with both gradients tiny are skipped).
inline double max_grad_rel_err(ParamSet& params, const std::function<double()>& eval_value,
                               const std::function<void()>& eval_grad, double h = 1e-5) {
  params.zero_grad();
  eval_grad();
  double worst = 0.0;
  for (std::size_t e = 0; e < params.count(); ++e) {
    ParamSet::Entry& entry = params.entry(e);
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double analytic = entry.grad.data[i];
      const double fd = central_fd(eval_value, entry.value.data[i], h);
      if (std::abs(analytic) < 1e-9 && std::abs(fd) < 1e-7) continue;
      worst = std::max(worst, rel_err(analytic, fd));
    }
  }
  return worst;
}

}  // namespace flowlab::testutil
