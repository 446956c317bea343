#include "flowlab/optim.hpp"

#include <cmath>

#include "flowlab/errors.hpp"

namespace flowlab {

Adam::Adam(const ParamSet& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params.count());
  v_.reserve(params.count());
  for (std::size_t i = 0; i < params.count(); ++i) {
    m_.push_back(Tensor::zeros_like(params.entry(i).value));
    v_.push_back(Tensor::zeros_like(params.entry(i).value));
  }
}

void Adam::step(ParamSet& params, double lr) {
  require(params.count() == m_.size(), "E_STATE", "optimizer bound to a different ParamSet");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.count(); ++i) {
    ParamSet::Entry& e = params.entry(i);
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < e.value.size(); ++j) {
      const double g = e.grad.data[j];
      m.data[j] = beta1_ * m.data[j] + (1.0 - beta1_) * g;
      v.data[j] = beta2_ * v.data[j] + (1.0 - beta2_) * g * g;
      const double mhat = m.data[j] / bc1;
      const double vhat = v.data[j] / bc2;
      e.value.data[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
    assert_finite(e.value, "adam update");
  }
  params.set_version(params.version() + 1);
}

double scheduled_lr(double peak_lr, std::uint64_t step, std::uint64_t warmup_steps,
                    std::uint64_t total_steps) {
  require(total_steps > 0, "E_ARG", "schedule needs total_steps > 0");
  const double s = static_cast<double>(step);
  if (warmup_steps > 0 && step < warmup_steps)
    return peak_lr * (s + 1.0) / static_cast<double>(warmup_steps);
  const double span = static_cast<double>(total_steps - warmup_steps);
  if (span <= 0.0) return peak_lr;
  const double frac = (s - static_cast<double>(warmup_steps)) / span;
  return peak_lr * std::max(0.0, 1.0 - frac);
}

}  // namespace flowlab
