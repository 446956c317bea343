#include "flowlab/samplers.hpp"

#include <cmath>

#include "json.hpp"

#include "flowlab/errors.hpp"

namespace flowlab {

void TimeGrid::validate() const {
  require(steps >= 3, "E_ARG", "time grid needs at least 3 steps");
}

void WindowSpec::validate(const TimeGrid& grid) const {
  require(ws >= 1, "E_ARG", "window size must be >= 1");
  require(s_min >= 1, "E_ARG", "SDE window cannot start at t = 0");
  require(s_min + ws - 1 <= grid.steps - 2, "E_ARG",
          "SDE window must leave the final step deterministic");
}

double sigma_schedule(double t, double noise_level) {
  require(t > 0.0 && t < 1.0, "E_ARG", "sigma_schedule: t must lie in (0, 1)");
  require(noise_level >= 0.0, "E_ARG", "noise level must be >= 0");
  return noise_level * std::sqrt((1.0 - t) / t);
}

SdeMeanCoeffs sde_mean_coeffs(double t, double dt, double noise_level) {
  require(t > 0.0, "E_ARG", "sde_mean_coeffs: t must be positive");
  // sigma_t^2 / (2(1-t)) simplifies to a^2 / (2t).
  const double corr = noise_level * noise_level / (2.0 * t);
  SdeMeanCoeffs k;
  k.v_coef = dt * (1.0 + corr * t);
  k.x_coef = 1.0 - dt * corr;
  return k;
}

Tensor ode_step(const Tensor& x, const Tensor& v, double dt) {
  require(x.same_shape(v), "E_SHAPE", "ode_step shape mismatch");
  Tensor next(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) next.data[i] = dt * v.data[i] + x.data[i];
  return next;
}

Tensor sde_mean(const Tensor& x, const Tensor& v, double t, double dt, double noise_level) {
  require(x.same_shape(v), "E_SHAPE", "sde_mean shape mismatch");
  const SdeMeanCoeffs k = sde_mean_coeffs(t, dt, noise_level);
  Tensor mean(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i)
    mean.data[i] = k.v_coef * v.data[i] + k.x_coef * x.data[i];
  return mean;
}

Tensor sde_step(const Tensor& x, const Tensor& v, double t, double dt, double noise_level,
                const Tensor& noise) {
  require(noise.same_shape(x), "E_SHAPE", "sde_step noise shape mismatch");
  Tensor next = sde_mean(x, v, t, dt, noise_level);
  const double scale = sigma_schedule(t, noise_level) * std::sqrt(dt);
  if (scale != 0.0)
    for (std::size_t i = 0; i < next.size(); ++i) next.data[i] += scale * noise.data[i];
  return next;
}

std::size_t Trajectory::sde_count() const {
  std::size_t n = 0;
  for (const StepRecord& s : steps)
    if (s.kind == StepKind::kSde) ++n;
  return n;
}

Trajectory rollout_field(const VelocityField& field, const Tensor& x0, const TimeGrid& grid,
                         const std::optional<WindowSpec>& window, double noise_level, Rng& rng) {
  grid.validate();
  if (window) window->validate(grid);

  Trajectory traj;
  traj.grid_steps = grid.steps;
  traj.noise_level = noise_level;
  traj.states.reserve(grid.steps + 1);
  traj.steps.reserve(grid.steps);
  traj.states.push_back(x0);

  for (std::size_t k = 0; k < grid.steps; ++k) {
    const double t = grid.knot(k);
    const Tensor& x = traj.states.back();
    const Tensor v = field(x, t);
    StepRecord rec;
    rec.index = k;
    rec.t = t;
    if (window && window->contains(k)) {
      rec.kind = StepKind::kSde;
      rec.mean = sde_mean(x, v, t, grid.dt(), noise_level);
      rec.sigma = sigma_schedule(t, noise_level);
      rec.noise = rng.normal_tensor(x.shape);
      Tensor next = rec.mean;
      const double scale = rec.sigma * std::sqrt(grid.dt());
      if (scale != 0.0)
        for (std::size_t i = 0; i < next.size(); ++i) next.data[i] += scale * rec.noise.data[i];
      traj.states.push_back(std::move(next));
    } else {
      rec.kind = StepKind::kOde;
      traj.states.push_back(ode_step(x, v, grid.dt()));
    }
    traj.steps.push_back(std::move(rec));
  }
  return traj;
}

namespace {

VelocityField model_field(const ModelConfig& cfg, const ParamSet& params, const Tensor& c,
                          double guidance_scale) {
  return [&cfg, &params, c, guidance_scale](const Tensor& x, double t) {
    return forward_value(cfg, params, x, c, t, guidance_scale);
  };
}

}  // namespace

Trajectory rollout_from(const ModelConfig& cfg, const ParamSet& params, const Tensor& c,
                        const Tensor& x0, const TimeGrid& grid,
                        const std::optional<WindowSpec>& window, double noise_level,
                        double guidance_scale, std::uint64_t seed) {
  Rng rng(derive_seed(seed, /*stream=*/0x70));
  Trajectory traj =
      rollout_field(model_field(cfg, params, c, guidance_scale), x0, grid, window, noise_level, rng);
  traj.condition = c;
  traj.guidance_scale = guidance_scale;
  traj.behavior_version = params.version();
  return traj;
}

Trajectory rollout(const ModelConfig& cfg, const ParamSet& params, const Tensor& c,
                   const TimeGrid& grid, const std::optional<WindowSpec>& window,
                   double noise_level, double guidance_scale, std::uint64_t seed) {
  Rng start_rng(derive_seed(seed, /*stream=*/0x71));
  const Tensor x0 = start_rng.normal_tensor({cfg.data_dim});
  return rollout_from(cfg, params, c, x0, grid, window, noise_level, guidance_scale, seed);
}

Trajectory replay(const ModelConfig& cfg, const ParamSet& params, const Trajectory& traj) {
  const TimeGrid grid = traj.grid();
  Trajectory out;
  out.grid_steps = traj.grid_steps;
  out.noise_level = traj.noise_level;
  out.guidance_scale = traj.guidance_scale;
  out.behavior_version = params.version();
  out.condition = traj.condition;
  out.states.push_back(traj.states.front());

  for (const StepRecord& rec : traj.steps) {
    const Tensor& x = out.states.back();
    const Tensor v = forward_value(cfg, params, x, traj.condition, rec.t, traj.guidance_scale);
    StepRecord replayed = rec;
    if (rec.kind == StepKind::kSde) {
      replayed.mean = sde_mean(x, v, rec.t, grid.dt(), traj.noise_level);
      out.states.push_back(
          sde_step(x, v, rec.t, grid.dt(), traj.noise_level, rec.noise));
    } else {
      out.states.push_back(ode_step(x, v, grid.dt()));
    }
    out.steps.push_back(std::move(replayed));
  }
  return out;
}

Value transition_logpdf(Tape& tape, const BoundModel& model, const Trajectory& traj,
                        std::size_t step_index) {
  require(step_index < traj.steps.size(), "E_ARG", "transition_logpdf: step index out of range");
  const StepRecord& rec = traj.steps[step_index];
  require(rec.kind == StepKind::kSde, "E_ARG", "transition_logpdf: not an SDE step");

  const TimeGrid grid = traj.grid();
  Value x = tape.constant(traj.states[step_index]);
  Value c = tape.constant(traj.condition);
  Value v = guided_forward(tape, model, x, c, rec.t, traj.guidance_scale);
  const SdeMeanCoeffs k = sde_mean_coeffs(rec.t, grid.dt(), traj.noise_level);
  Value mean = tape.axpy(k.v_coef, v, k.x_coef, x);
  Value next = tape.constant(traj.states[step_index + 1]);
  return gaussian_log_density(tape, next, mean, rec.sigma * std::sqrt(grid.dt()));
}

Value transition_logpdf_stored(Tape& tape, const Trajectory& traj, std::size_t step_index) {
  require(step_index < traj.steps.size(), "E_ARG", "transition_logpdf: step index out of range");
  const StepRecord& rec = traj.steps[step_index];
  require(rec.kind == StepKind::kSde, "E_ARG", "transition_logpdf: not an SDE step");
  const TimeGrid grid = traj.grid();
  Value mean = tape.constant(rec.mean);
  Value next = tape.constant(traj.states[step_index + 1]);
  return gaussian_log_density(tape, next, mean, rec.sigma * std::sqrt(grid.dt()));
}

namespace {

nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape}, {"data", t.data}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  Tensor t(j.at("shape").get<std::vector<std::size_t>>());
  const auto data = j.at("data").get<std::vector<double>>();
  require(data.size() == t.size(), "E_IO", "tensor payload size mismatch");
  t.data = data;
  return t;
}

}  // namespace

std::string Trajectory::to_json_string() const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["grid_steps"] = grid_steps;
  j["noise_level"] = noise_level;
  j["guidance_scale"] = guidance_scale;
  j["behavior_version"] = behavior_version;
  j["condition"] = tensor_to_json(condition);
  nlohmann::json states_j = nlohmann::json::array();
  for (const Tensor& s : states) states_j.push_back(tensor_to_json(s));
  j["states"] = states_j;
  nlohmann::json steps_j = nlohmann::json::array();
  for (const StepRecord& s : steps) {
    nlohmann::json rec = {{"index", s.index},
                          {"t", s.t},
                          {"kind", s.kind == StepKind::kSde ? "sde" : "ode"}};
    if (s.kind == StepKind::kSde) {
      rec["mean"] = tensor_to_json(s.mean);
      rec["sigma"] = s.sigma;
      rec["noise"] = tensor_to_json(s.noise);
    }
    steps_j.push_back(std::move(rec));
  }
  j["steps"] = steps_j;
  return j.dump();
}

Trajectory Trajectory::from_json_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  require(j.at("format_version").get<int>() == 1, "E_IO", "unsupported trajectory format version");
  Trajectory traj;
  traj.grid_steps = j.at("grid_steps").get<std::size_t>();
  traj.noise_level = j.at("noise_level").get<double>();
  traj.guidance_scale = j.at("guidance_scale").get<double>();
  traj.behavior_version = j.at("behavior_version").get<std::uint64_t>();
  traj.condition = tensor_from_json(j.at("condition"));
  for (const auto& s : j.at("states")) traj.states.push_back(tensor_from_json(s));
  for (const auto& s : j.at("steps")) {
    StepRecord rec;
    rec.index = s.at("index").get<std::size_t>();
    rec.t = s.at("t").get<double>();
    rec.kind = s.at("kind").get<std::string>() == "sde" ? StepKind::kSde : StepKind::kOde;
    if (rec.kind == StepKind::kSde) {
      rec.mean = tensor_from_json(s.at("mean"));
      rec.sigma = s.at("sigma").get<double>();
      rec.noise = tensor_from_json(s.at("noise"));
    }
    traj.steps.push_back(std::move(rec));
  }
  return traj;
}

}  // namespace flowlab
