#pragma once

#include <vector>

#include "flowlab/model.hpp"
#include "flowlab/optim.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/tape.hpp"

namespace flowlab {

// One clean sample and its corrupted observation.
struct TrainPair {
  Tensor x1;  // clean sample
  Tensor c;   // condition (noisy observation of x1)
};

// Point on the straight-line interpolant between base noise and data.
struct InterpolantSample {
  double t = 0.0;
  Tensor x0;        // base draw, N(0, I)
  Tensor x_t;       // (1-t)*x0 + t*x1
  Tensor v_target;  // x1 - x0
};

InterpolantSample sample_interpolant(const TrainPair& pair, Rng& rng);

struct FmBatch {
  std::vector<InterpolantSample> samples;
  std::vector<Tensor> conditions;  // post condition-dropout
};

// Regression loss: mean over the batch of the summed squared velocity error.
// Every sample contributes its own time, so the graph holds one forward pass
// per sample.
Value fm_loss(Tape& tape, const BoundModel& model, const FmBatch& batch);

// Loss value plus one Adam step; gradients are zeroed internally.
double pretrain_step(ParamSet& params, const ModelConfig& cfg, const FmBatch& batch, Adam& opt,
                     double lr);

// Conditional mean E[x1 - x0 | x_t = x] for x0 ~ N(0,1), x1 ~ N(mu1, sigma1^2)
// under independent coupling; the exact minimizer of the regression loss for
// the 1-D Gaussian task.
double analytic_gaussian_velocity(double x, double t, double mu1, double sigma1);

}  // namespace flowlab
