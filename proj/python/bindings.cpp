#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "flowlab/config.hpp"
#include "flowlab/errors.hpp"
#include "flowlab/flow.hpp"
#include "flowlab/grpo.hpp"
#include "flowlab/harness.hpp"
#include "flowlab/rewards.hpp"
#include "flowlab/samplers.hpp"
#include "flowlab/stats.hpp"
#include "flowlab/tasks.hpp"

namespace py = pybind11;
using namespace flowlab;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Tensor t;
  t.shape.assign(a.shape(), a.shape() + a.ndim());
  t.data.assign(a.data(), a.data() + a.size());
  return t;
}

py::array_t<double> tensor_to_array(const Tensor& t) {
  py::array_t<double> a(t.shape.empty() ? std::vector<std::size_t>{1} : t.shape);
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

ExperimentConfig config_from_any(const py::object& obj) {
  if (py::isinstance<py::str>(obj)) return load_config(obj.cast<std::string>());
  const std::string dumped = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return parse_config(nlohmann::json::parse(dumped));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Flow-matching conditional generation with GRPO post-training";

  py::register_exception<Error>(m, "FlowlabError");

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("data_dim", &ModelConfig::data_dim)
      .def_readwrite("hidden_dim", &ModelConfig::hidden_dim)
      .def_readwrite("num_layers", &ModelConfig::num_layers)
      .def_readwrite("time_embed_dim", &ModelConfig::time_embed_dim)
      .def_readwrite("cond_dropout_prob", &ModelConfig::cond_dropout_prob);

  py::class_<ParamSet>(m, "ParamSet")
      .def("clone", &ParamSet::clone)
      .def("version", &ParamSet::version)
      .def("scalar_count", &ParamSet::scalar_count)
      .def("same_values", &ParamSet::same_values);

  m.def("init_params", &init_params, py::arg("config"), py::arg("seed"));

  m.def(
      "forward",
      [](const ModelConfig& cfg, const ParamSet& params, const py::array_t<double>& x,
         const py::array_t<double>& c, double t, double guidance_scale) {
        return tensor_to_array(
            forward_value(cfg, params, tensor_from_array(x), tensor_from_array(c), t, guidance_scale));
      },
      py::arg("config"), py::arg("params"), py::arg("x"), py::arg("c"), py::arg("t"),
      py::arg("guidance_scale") = 1.0);

  m.def("analytic_gaussian_velocity", &analytic_gaussian_velocity, py::arg("x"), py::arg("t"),
        py::arg("mu1"), py::arg("sigma1"));
  m.def("sigma_schedule", &sigma_schedule, py::arg("t"), py::arg("noise_level"));

  m.def(
      "ode_step",
      [](const py::array_t<double>& x, const py::array_t<double>& v, double dt) {
        return tensor_to_array(ode_step(tensor_from_array(x), tensor_from_array(v), dt));
      },
      py::arg("x"), py::arg("v"), py::arg("dt"));
  m.def(
      "sde_mean",
      [](const py::array_t<double>& x, const py::array_t<double>& v, double t, double dt, double a) {
        return tensor_to_array(sde_mean(tensor_from_array(x), tensor_from_array(v), t, dt, a));
      },
      py::arg("x"), py::arg("v"), py::arg("t"), py::arg("dt"), py::arg("noise_level"));
  m.def(
      "sde_step",
      [](const py::array_t<double>& x, const py::array_t<double>& v, double t, double dt, double a,
         const py::array_t<double>& noise) {
        return tensor_to_array(sde_step(tensor_from_array(x), tensor_from_array(v), t, dt, a,
                                        tensor_from_array(noise)));
      },
      py::arg("x"), py::arg("v"), py::arg("t"), py::arg("dt"), py::arg("noise_level"),
      py::arg("noise"));

  py::class_<Trajectory>(m, "Trajectory")
      .def_property_readonly("terminal", [](const Trajectory& t) { return tensor_to_array(t.terminal()); })
      .def_property_readonly("states",
                             [](const Trajectory& t) {
                               py::list out;
                               for (const Tensor& s : t.states) out.append(tensor_to_array(s));
                               return out;
                             })
      .def_property_readonly("sde_count", &Trajectory::sde_count)
      .def_readonly("grid_steps", &Trajectory::grid_steps)
      .def_readonly("noise_level", &Trajectory::noise_level)
      .def_readonly("behavior_version", &Trajectory::behavior_version)
      .def("to_json", &Trajectory::to_json_string)
      .def_static("from_json", &Trajectory::from_json_string);

  m.def(
      "rollout",
      [](const ModelConfig& cfg, const ParamSet& params, const py::array_t<double>& c,
         std::size_t steps, std::optional<std::pair<std::size_t, std::size_t>> window,
         double noise_level, double guidance_scale, std::uint64_t seed) {
        std::optional<WindowSpec> w;
        if (window) w = WindowSpec{window->first, window->second};
        return rollout(cfg, params, tensor_from_array(c), TimeGrid{steps}, w, noise_level,
                       guidance_scale, seed);
      },
      py::arg("config"), py::arg("params"), py::arg("c"), py::arg("steps"),
      py::arg("window") = std::nullopt, py::arg("noise_level") = 0.0,
      py::arg("guidance_scale") = 1.0, py::arg("seed") = 0);

  m.def("compute_advantages", [](const std::vector<double>& rewards) {
    const AdvantageResult r = compute_advantages(rewards);
    return py::make_tuple(r.advantages, r.degenerate);
  });

  m.def(
      "step_ratio",
      [](const ModelConfig& cfg, const ParamSet& params, const Trajectory& traj, std::size_t k) {
        return step_ratio(cfg, params, traj, k);
      },
      py::arg("config"), py::arg("params"), py::arg("trajectory"), py::arg("step_index"));

  py::class_<TaskSpec>(m, "TaskSpec")
      .def(py::init([](const std::string& kind, double corruption_std, double mean, double std,
                       double radius) {
             TaskSpec t;
             t.kind = task_kind_from_string(kind);
             t.corruption_std = corruption_std;
             t.mean1 = mean;
             t.std1 = std;
             t.radius = radius;
             t.validate();
             return t;
           }),
           py::arg("kind"), py::arg("corruption_std") = 0.5, py::arg("mean") = 2.0,
           py::arg("std") = 0.5, py::arg("radius") = 1.0)
      .def_property_readonly("data_dim", &TaskSpec::data_dim);

  m.def(
      "sample_pair",
      [](const TaskSpec& spec, std::uint64_t seed) {
        Rng rng(seed);
        const TrainPair pair = sample_pair(spec, rng);
        return py::make_tuple(tensor_to_array(pair.x1), tensor_to_array(pair.c));
      },
      py::arg("task"), py::arg("seed"));
  m.def(
      "clean_log_density",
      [](const TaskSpec& spec, const py::array_t<double>& x) {
        return clean_log_density(spec, tensor_from_array(x));
      },
      py::arg("task"), py::arg("x"));

  m.def(
      "reward_fidelity",
      [](const py::array_t<double>& x, const py::array_t<double>& x1) {
        return reward_fidelity(tensor_from_array(x), tensor_from_array(x1));
      },
      py::arg("x"), py::arg("x1"));
  m.def("estimate_std", &estimate_std, py::arg("name"), py::arg("scores"));

  m.def("ks_two_sample", [](std::vector<double> a, std::vector<double> b) {
    const KsResult r = ks_two_sample(std::move(a), std::move(b));
    return py::make_tuple(r.statistic, r.p_value);
  });

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("config", &Checkpoint::config)
      .def_readonly("params", &Checkpoint::params)
      .def_readonly("metadata", &Checkpoint::metadata);
  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("checkpoint"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def(
      "run_pretrain",
      [](const py::object& config, const std::string& init_checkpoint) {
        const PretrainOutcome out = run_pretrain(config_from_any(config), init_checkpoint);
        return py::make_tuple(out.checkpoint_path, out.final_loss);
      },
      py::arg("config"), py::arg("init_checkpoint") = "");
  m.def(
      "run_grpo",
      [](const py::object& config, const std::string& init_checkpoint, bool dump_trajectories) {
        const GrpoOutcome out = run_grpo(config_from_any(config), init_checkpoint, dump_trajectories);
        return py::make_tuple(out.checkpoint_path, out.update_steps);
      },
      py::arg("config"), py::arg("init_checkpoint"), py::arg("dump_trajectories") = false);
  m.def(
      "run_eval",
      [](const py::object& config, const std::string& checkpoint_path, std::size_t n) {
        const EvalSummary s = run_eval(config_from_any(config), checkpoint_path, n);
        py::dict out;
        for (std::size_t i = 0; i < s.names.size(); ++i)
          out[py::str(s.names[i])] = py::make_tuple(s.means[i], s.stds[i]);
        return out;
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("n") = 64);
  m.def("preset_config", [](const std::string& name) {
    return py::module_::import("json").attr("loads")(preset_config(name).dump());
  });
}
