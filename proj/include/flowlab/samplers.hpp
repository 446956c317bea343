#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowlab/model.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/tape.hpp"

namespace flowlab {

// Uniform denoising grid over t in [0, 1]: knots t_k = k/T, step k integrates
// t_k -> t_{k+1} using quantities evaluated at the step's start knot.
struct TimeGrid {
  std::size_t steps = 10;  // T

  double dt() const { return 1.0 / static_cast<double>(steps); }
  double knot(std::size_t k) const { return static_cast<double>(k) / static_cast<double>(steps); }
  void validate() const;
};

// Contiguous block of stochastic steps. Step 0 starts at t = 0 where the
// noise schedule is singular, and the final step must stay deterministic, so
// eligible indices are 1 .. T-2.
struct WindowSpec {
  std::size_t s_min = 1;  // first SDE step index
  std::size_t ws = 2;     // number of SDE steps

  bool contains(std::size_t step_index) const {
    return step_index >= s_min && step_index < s_min + ws;
  }
  void validate(const TimeGrid& grid) const;
};

// Noise schedule sigma_t = a * sqrt((1-t)/t) on the open interval.
double sigma_schedule(double t, double noise_level);

// The stochastic update mean is an affine combination of the current state
// and the predicted velocity; both the plain and the tape evaluation paths
// use these coefficients so their results agree bit-for-bit.
struct SdeMeanCoeffs {
  double v_coef = 0.0;  // dt * (1 + a^2/2)
  double x_coef = 1.0;  // 1 - dt * a^2 / (2t)
};

SdeMeanCoeffs sde_mean_coeffs(double t, double dt, double noise_level);

Tensor ode_step(const Tensor& x, const Tensor& v, double dt);
Tensor sde_mean(const Tensor& x, const Tensor& v, double t, double dt, double noise_level);
Tensor sde_step(const Tensor& x, const Tensor& v, double t, double dt, double noise_level,
                const Tensor& noise);

enum class StepKind { kOde, kSde };

struct StepRecord {
  std::size_t index = 0;
  double t = 0.0;
  StepKind kind = StepKind::kOde;
  // SDE steps only:
  Tensor mean;    // behavior-policy transition mean
  double sigma = 0.0;
  Tensor noise;   // injected standard normals
};

// Full record of one sampled denoising path. states[k] is the state at knot
// t_k; steps[k] describes the transition t_k -> t_{k+1}.
struct Trajectory {
  std::size_t grid_steps = 0;
  double noise_level = 0.0;
  double guidance_scale = 1.0;
  std::uint64_t behavior_version = 0;
  Tensor condition;
  std::vector<Tensor> states;
  std::vector<StepRecord> steps;

  const Tensor& terminal() const { return states.back(); }
  std::size_t sde_count() const;
  TimeGrid grid() const { return TimeGrid{grid_steps}; }

  std::string to_json_string() const;
  static Trajectory from_json_string(const std::string& text);
};

// Plain velocity field; used for analytic oracles and evaluation paths.
using VelocityField = std::function<Tensor(const Tensor& x, double t)>;

// Mixed ODE/SDE rollout of an arbitrary field from an explicit start state.
// The rng is consumed only on SDE steps.
Trajectory rollout_field(const VelocityField& field, const Tensor& x0, const TimeGrid& grid,
                         const std::optional<WindowSpec>& window, double noise_level, Rng& rng);

// Model rollout: draws x0 ~ N(0, I) and SDE noise from a stream derived from
// seed; fully deterministic given (params, c, grid, window, a, w, seed).
Trajectory rollout(const ModelConfig& cfg, const ParamSet& params, const Tensor& c,
                   const TimeGrid& grid, const std::optional<WindowSpec>& window,
                   double noise_level, double guidance_scale, std::uint64_t seed);

// As above but from a caller-provided start state.
Trajectory rollout_from(const ModelConfig& cfg, const ParamSet& params, const Tensor& c,
                        const Tensor& x0, const TimeGrid& grid,
                        const std::optional<WindowSpec>& window, double noise_level,
                        double guidance_scale, std::uint64_t seed);

// Re-runs a trajectory under the given parameters, injecting the stored start
// state and noises instead of drawing fresh ones.
Trajectory replay(const ModelConfig& cfg, const ParamSet& params, const Trajectory& traj);

// Log density of the stored next state under the transition kernel whose mean
// is recomputed from the bound parameters (the stored sigma*sqrt(dt) is the
// kernel std). Differentiable through the bound model; SDE steps only.
Value transition_logpdf(Tape& tape, const BoundModel& model, const Trajectory& traj,
                        std::size_t step_index);

// Same kernel evaluated at the stored behavior mean (no model evaluation).
Value transition_logpdf_stored(Tape& tape, const Trajectory& traj, std::size_t step_index);

}  // namespace flowlab
