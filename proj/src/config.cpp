#include "flowlab/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "flowlab/checkpoint.hpp"
#include "flowlab/errors.hpp"

namespace flowlab {

namespace {

// Every object in the config is walked with an explicit key list so typos
// fail loudly instead of silently falling back to defaults.
void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                         const std::string& where) {
  require(j.is_object(), "E_CONFIG", where + " must be a JSON object");
  for (const auto& item : j.items())
    require(known.count(item.key()) == 1, "E_CONFIG",
            "unknown key '" + item.key() + "' in " + where);
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail("E_CONFIG", "bad value for key '" + key + "'");
  }
}

TaskSpec parse_task(const nlohmann::json& j) {
  TaskSpec task;
  task.kind = task_kind_from_string(get_or<std::string>(j, "kind", "gauss1d"));
  std::set<std::string> known = {"kind", "corruption_std"};
  switch (task.kind) {
    case TaskKind::kGauss1d: known.insert({"mean", "std"}); break;
    case TaskKind::kCircle2d: known.insert("radius"); break;
    case TaskKind::kMixture: known.insert("components"); break;
  }
  reject_unknown_keys(j, known, "task");
  task.corruption_std = get_or<double>(j, "corruption_std", 0.5);
  task.mean1 = get_or<double>(j, "mean", 2.0);
  task.std1 = get_or<double>(j, "std", 0.5);
  task.radius = get_or<double>(j, "radius", 1.0);
  if (j.contains("components")) {
    for (const auto& c : j.at("components")) {
      reject_unknown_keys(c, {"weight", "mean", "std"}, "task.components[]");
      MixtureComponent mc;
      mc.weight = get_or<double>(c, "weight", 1.0);
      mc.mean = get_or<double>(c, "mean", 0.0);
      mc.std = get_or<double>(c, "std", 1.0);
      task.components.push_back(mc);
    }
  }
  task.validate();
  return task;
}

nlohmann::json task_to_json(const TaskSpec& t) {
  nlohmann::json j;
  j["kind"] = to_string(t.kind);
  j["corruption_std"] = t.corruption_std;
  switch (t.kind) {
    case TaskKind::kGauss1d:
      j["mean"] = t.mean1;
      j["std"] = t.std1;
      break;
    case TaskKind::kCircle2d:
      j["radius"] = t.radius;
      break;
    case TaskKind::kMixture: {
      nlohmann::json comps = nlohmann::json::array();
      for (const MixtureComponent& c : t.components)
        comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"std", c.std}});
      j["components"] = comps;
      break;
    }
  }
  return j;
}

ModelConfig parse_model(const nlohmann::json& j, const TaskSpec& task) {
  reject_unknown_keys(
      j, {"data_dim", "hidden_dim", "num_layers", "time_embed_dim", "cond_dropout_prob", "activation"},
      "model");
  ModelConfig cfg;
  cfg.data_dim = get_or<std::size_t>(j, "data_dim", task.data_dim());
  require(cfg.data_dim == task.data_dim(), "E_CONFIG",
          "model.data_dim conflicts with the task's data dimension");
  cfg.hidden_dim = get_or<std::size_t>(j, "hidden_dim", 64);
  cfg.num_layers = get_or<std::size_t>(j, "num_layers", 2);
  cfg.time_embed_dim = get_or<std::size_t>(j, "time_embed_dim", 4);
  cfg.cond_dropout_prob = get_or<double>(j, "cond_dropout_prob", 0.1);
  cfg.activation = activation_from_string(get_or<std::string>(j, "activation", "silu"));
  cfg.validate();
  return cfg;
}

nlohmann::json model_to_json(const ModelConfig& m) {
  return {{"data_dim", m.data_dim},
          {"hidden_dim", m.hidden_dim},
          {"num_layers", m.num_layers},
          {"time_embed_dim", m.time_embed_dim},
          {"cond_dropout_prob", m.cond_dropout_prob},
          {"activation", to_string(m.activation)}};
}

PretrainConfig parse_pretrain(const nlohmann::json& j) {
  reject_unknown_keys(j, {"steps", "batch_size", "learning_rate", "warmup_steps", "checkpoint_interval"},
                      "pretrain");
  PretrainConfig p;
  p.steps = get_or<std::size_t>(j, "steps", p.steps);
  p.batch_size = get_or<std::size_t>(j, "batch_size", p.batch_size);
  p.learning_rate = get_or<double>(j, "learning_rate", p.learning_rate);
  p.warmup_steps = get_or<std::size_t>(j, "warmup_steps", p.warmup_steps);
  p.checkpoint_interval = get_or<std::size_t>(j, "checkpoint_interval", p.checkpoint_interval);
  require(p.steps >= 1 && p.batch_size >= 1, "E_CONFIG", "pretrain steps/batch must be >= 1");
  require(p.learning_rate > 0.0, "E_CONFIG", "pretrain learning rate must be positive");
  return p;
}

nlohmann::json pretrain_to_json(const PretrainConfig& p) {
  return {{"steps", p.steps},
          {"batch_size", p.batch_size},
          {"learning_rate", p.learning_rate},
          {"warmup_steps", p.warmup_steps},
          {"checkpoint_interval", p.checkpoint_interval}};
}

std::vector<RewardSpec> parse_rewards(const nlohmann::json& j) {
  require(j.is_array() && !j.empty(), "E_CONFIG", "grpo.rewards must be a nonempty array");
  std::vector<RewardSpec> specs;
  std::set<std::string> names;
  for (const auto& r : j) {
    reject_unknown_keys(r, {"name", "kind", "weight", "command", "timeout_sec"}, "grpo.rewards[]");
    RewardSpec spec;
    spec.kind = reward_kind_from_string(get_or<std::string>(r, "kind", "target_loglik"));
    spec.name = get_or<std::string>(r, "name", to_string(spec.kind));
    spec.weight = get_or<double>(r, "weight", 1.0);
    require(std::isfinite(spec.weight), "E_CONFIG", "reward weight must be finite");
    if (spec.kind == RewardKind::kExternal) {
      spec.command = get_or<std::vector<std::string>>(r, "command", std::vector<std::string>{});
      require(!spec.command.empty(), "E_CONFIG", "external reward needs a command");
      spec.timeout_sec = get_or<double>(r, "timeout_sec", 30.0);
      require(spec.timeout_sec > 0.0, "E_CONFIG", "scorer timeout must be positive");
    }
    require(names.insert(spec.name).second, "E_CONFIG", "duplicate reward name '" + spec.name + "'");
    specs.push_back(std::move(spec));
  }
  return specs;
}

nlohmann::json rewards_to_json(const std::vector<RewardSpec>& specs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const RewardSpec& s : specs) {
    nlohmann::json r = {{"name", s.name}, {"kind", to_string(s.kind)}, {"weight", s.weight}};
    if (s.kind == RewardKind::kExternal) {
      r["command"] = s.command;
      r["timeout_sec"] = s.timeout_sec;
    }
    arr.push_back(std::move(r));
  }
  return arr;
}

GrpoConfig parse_grpo_section(const nlohmann::json& j, std::vector<RewardSpec>* rewards,
                              std::size_t* calibration_prompts, std::size_t* checkpoint_interval) {
  reject_unknown_keys(j,
                      {"group_size", "clip_range", "kl_beta", "prompts_per_round", "repeats",
                       "batch_size", "updates_per_iteration", "noise_level", "window", "t_range",
                       "learning_rate", "total_update_steps", "guidance_scale", "rewards",
                       "calibration_prompts", "checkpoint_interval"},
                      "grpo");
  GrpoConfig g;
  g.group_size = get_or<std::size_t>(j, "group_size", g.group_size);
  g.clip_range = get_or<double>(j, "clip_range", g.clip_range);
  g.kl_beta = get_or<double>(j, "kl_beta", g.kl_beta);
  g.prompts_per_round = get_or<std::size_t>(j, "prompts_per_round", g.prompts_per_round);
  g.repeats = get_or<std::size_t>(j, "repeats", g.repeats);
  g.batch_size = get_or<std::size_t>(j, "batch_size", g.batch_size);
  g.updates_per_iteration = get_or<std::size_t>(j, "updates_per_iteration", g.updates_per_iteration);
  g.noise_level = get_or<double>(j, "noise_level", g.noise_level);
  if (j.contains("window")) {
    const auto& w = j.at("window");
    reject_unknown_keys(w, {"s_min_range", "size"}, "grpo.window");
    const auto range = get_or<std::vector<std::size_t>>(w, "s_min_range", {1, 3});
    require(range.size() == 2, "E_CONFIG", "window.s_min_range must have two entries");
    g.window.s_min_lo = range[0];
    g.window.s_min_hi = range[1];
    g.window.ws = get_or<long>(w, "size", 2);
  }
  if (j.contains("t_range")) {
    const auto range = j.at("t_range").get<std::vector<std::size_t>>();
    require(range.size() == 2, "E_CONFIG", "t_range must have two entries");
    g.t_min = range[0];
    g.t_max = range[1];
  }
  g.learning_rate = get_or<double>(j, "learning_rate", g.learning_rate);
  g.total_update_steps = get_or<std::size_t>(j, "total_update_steps", g.total_update_steps);
  g.guidance_scale = get_or<double>(j, "guidance_scale", g.guidance_scale);
  g.validate();

  *rewards = parse_rewards(j.contains("rewards")
                               ? j.at("rewards")
                               : nlohmann::json::parse(R"([{"kind":"target_loglik"}])"));
  *calibration_prompts = get_or<std::size_t>(j, "calibration_prompts", 16);
  require(*calibration_prompts >= 2, "E_CONFIG", "calibration_prompts must be >= 2");
  *checkpoint_interval = get_or<std::size_t>(j, "checkpoint_interval", 0);
  return g;
}

nlohmann::json grpo_to_json(const ExperimentConfig& c) {
  const GrpoConfig& g = c.grpo;
  return {{"group_size", g.group_size},
          {"clip_range", g.clip_range},
          {"kl_beta", g.kl_beta},
          {"prompts_per_round", g.prompts_per_round},
          {"repeats", g.repeats},
          {"batch_size", g.batch_size},
          {"updates_per_iteration", g.updates_per_iteration},
          {"noise_level", g.noise_level},
          {"window", {{"s_min_range", {g.window.s_min_lo, g.window.s_min_hi}}, {"size", g.window.ws}}},
          {"t_range", {g.t_min, g.t_max}},
          {"learning_rate", g.learning_rate},
          {"total_update_steps", g.total_update_steps},
          {"guidance_scale", g.guidance_scale},
          {"rewards", rewards_to_json(c.rewards)},
          {"calibration_prompts", c.calibration_prompts},
          {"checkpoint_interval", c.grpo_checkpoint_interval}};
}

EvalConfig parse_eval(const nlohmann::json& j) {
  reject_unknown_keys(j, {"heldout_size", "interval", "inference_steps", "guidance_scale", "metrics"},
                      "eval");
  EvalConfig e;
  e.heldout_size = get_or<std::size_t>(j, "heldout_size", e.heldout_size);
  e.interval = get_or<std::size_t>(j, "interval", e.interval);
  e.inference_steps = get_or<std::size_t>(j, "inference_steps", e.inference_steps);
  e.guidance_scale = get_or<double>(j, "guidance_scale", e.guidance_scale);
  e.metrics = get_or<std::vector<std::string>>(j, "metrics", e.metrics);
  require(e.heldout_size >= 1 && e.interval >= 1 && e.inference_steps >= 3, "E_CONFIG",
          "invalid eval section");
  require(!e.metrics.empty(), "E_CONFIG", "eval.metrics must not be empty");
  return e;
}

nlohmann::json eval_to_json(const EvalConfig& e) {
  return {{"heldout_size", e.heldout_size},
          {"interval", e.interval},
          {"inference_steps", e.inference_steps},
          {"guidance_scale", e.guidance_scale},
          {"metrics", e.metrics}};
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& j) {
  reject_unknown_keys(j, {"task", "model", "pretrain", "grpo", "eval", "seed", "out_dir"}, "config");
  ExperimentConfig cfg;
  cfg.task = parse_task(j.contains("task") ? j.at("task") : nlohmann::json::object());
  cfg.model = parse_model(j.contains("model") ? j.at("model") : nlohmann::json::object(), cfg.task);
  cfg.pretrain = parse_pretrain(j.contains("pretrain") ? j.at("pretrain") : nlohmann::json::object());
  cfg.grpo = parse_grpo_section(j.contains("grpo") ? j.at("grpo") : nlohmann::json::object(),
                                &cfg.rewards, &cfg.calibration_prompts, &cfg.grpo_checkpoint_interval);
  cfg.eval = parse_eval(j.contains("eval") ? j.at("eval") : nlohmann::json::object());
  cfg.seed = get_or<std::uint64_t>(j, "seed", 1234);
  cfg.out_dir = get_or<std::string>(j, "out_dir", "runs/experiment");
  require(!cfg.out_dir.empty(), "E_CONFIG", "out_dir must not be empty");

  cfg.resolved["task"] = task_to_json(cfg.task);
  cfg.resolved["model"] = model_to_json(cfg.model);
  cfg.resolved["pretrain"] = pretrain_to_json(cfg.pretrain);
  cfg.resolved["grpo"] = grpo_to_json(cfg);
  cfg.resolved["eval"] = eval_to_json(cfg.eval);
  cfg.resolved["seed"] = cfg.seed;
  cfg.resolved["out_dir"] = cfg.out_dir;
  cfg.config_hash = fnv1a64_hex(cfg.resolved.dump());
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "E_IO", "cannot open config file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    fail("E_CONFIG", "config is not valid JSON: " + std::string(e.what()));
  }
  return parse_config(j);
}

nlohmann::json preset_config(const std::string& name) {
  if (name == "gauss1d") {
    return nlohmann::json::parse(R"json({
      "task": {"kind": "gauss1d", "mean": 2.0, "std": 0.5, "corruption_std": 0.5},
      "model": {"hidden_dim": 64, "num_layers": 2, "time_embed_dim": 4,
                "cond_dropout_prob": 0.1, "activation": "silu"},
      "pretrain": {"steps": 3000, "batch_size": 128, "learning_rate": 0.003, "warmup_steps": 150},
      "grpo": {
        "group_size": 8, "clip_range": 0.2, "kl_beta": 0.01,
        "prompts_per_round": 6, "repeats": 4, "batch_size": 12,
        "updates_per_iteration": 4, "noise_level": 0.3,
        "window": {"s_min_range": [1, 3], "size": 2},
        "t_range": [7, 10], "learning_rate": 0.002, "total_update_steps": 200,
        "rewards": [{"kind": "target_loglik", "weight": 1.0}]
      },
      "eval": {"heldout_size": 64, "interval": 5, "inference_steps": 10},
      "seed": 1234,
      "out_dir": "runs/gauss1d"
    })json");
  }
  if (name == "circle2d") {
    return nlohmann::json::parse(R"json({
      "task": {"kind": "circle2d", "radius": 1.0, "corruption_std": 0.6},
      "model": {"hidden_dim": 64, "num_layers": 3, "time_embed_dim": 4,
                "cond_dropout_prob": 0.1, "activation": "silu"},
      "pretrain": {"steps": 4000, "batch_size": 128, "learning_rate": 0.003, "warmup_steps": 200},
      "grpo": {
        "group_size": 8, "clip_range": 0.2, "kl_beta": 0.01,
        "prompts_per_round": 6, "repeats": 4, "batch_size": 12,
        "updates_per_iteration": 4, "noise_level": 0.3,
        "window": {"s_min_range": [1, 3], "size": 2},
        "t_range": [7, 10], "learning_rate": 0.002, "total_update_steps": 300,
        "rewards": [
          {"kind": "target_loglik", "weight": 0.6},
          {"kind": "ref_similarity", "weight": 1.0},
          {"kind": "fidelity", "weight": 1.0}
        ]
      },
      "eval": {"heldout_size": 64, "interval": 5, "inference_steps": 10},
      "seed": 1234,
      "out_dir": "runs/circle2d"
    })json");
  }
  fail("E_CONFIG", "unknown preset '" + name + "' (expected gauss1d or circle2d)");
}

}  // namespace flowlab
