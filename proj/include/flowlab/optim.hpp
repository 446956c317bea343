#pragma once

#include <cstdint>
#include <vector>

#include "flowlab/model.hpp"

namespace flowlab {

// Adam over a ParamSet's gradient slots. step() consumes the accumulated
// gradients and bumps the parameter version.
class Adam {
 public:
  explicit Adam(const ParamSet& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void step(ParamSet& params, double lr);
  std::uint64_t steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

// Linear warmup to peak_lr over warmup_steps, then linear decay to zero at
// total_steps. warmup_steps = 0 gives pure linear decay.
double scheduled_lr(double peak_lr, std::uint64_t step, std::uint64_t warmup_steps,
                    std::uint64_t total_steps);

}  // namespace flowlab
