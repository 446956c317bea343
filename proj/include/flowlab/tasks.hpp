#pragma once

#include <string>
#include <vector>

#include "flowlab/flow.hpp"
#include "flowlab/rng.hpp"

namespace flowlab {

enum class TaskKind { kGauss1d, kCircle2d, kMixture };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind k);

struct MixtureComponent {
  double weight = 1.0;
  double mean = 0.0;
  double std = 1.0;
};

// Synthetic conditional-denoising tasks with known ground truth: a clean
// distribution plus an additive-Gaussian corruption that produces the
// condition.
struct TaskSpec {
  TaskKind kind = TaskKind::kGauss1d;
  double corruption_std = 0.5;  // sigma_c

  // gauss1d
  double mean1 = 2.0;   // mu1
  double std1 = 0.5;    // sigma1

  // circle2d
  double radius = 1.0;

  // mixture (1-D)
  std::vector<MixtureComponent> components;

  std::size_t data_dim() const { return kind == TaskKind::kCircle2d ? 2 : 1; }
  void validate() const;
};

// Clean draw x1 plus condition c = x1 + sigma_c * eta.
TrainPair sample_pair(const TaskSpec& spec, Rng& rng);

// Log density of x under the clean distribution; circle2d substitutes the
// pseudo-log-density -(|x| - radius)^2.
double clean_log_density(const TaskSpec& spec, const Tensor& x);

// Exact posterior of x1 given c for gauss1d (Gaussian conjugacy).
struct GaussPosterior {
  double mean = 0.0;
  double std = 1.0;
};
GaussPosterior gauss1d_posterior(const TaskSpec& spec, double c);

}  // namespace flowlab
