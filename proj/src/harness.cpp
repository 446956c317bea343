#include "flowlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "flowlab/errors.hpp"
#include "flowlab/flow.hpp"
#include "flowlab/samplers.hpp"
#include "flowlab/stats.hpp"

namespace flowlab {

namespace {

// seed streams, disjoint by construction
constexpr std::uint64_t kStreamInit = 0x01;
constexpr std::uint64_t kStreamPretrainData = 0x60;
constexpr std::uint64_t kStreamCalibPrompts = 0xc0;
constexpr std::uint64_t kStreamCalibRollout = 0xc1;
constexpr std::uint64_t kStreamHeldoutPrompts = 0xe0;
constexpr std::uint64_t kStreamHeldoutRollout = 0xe1;

void write_timing_log(const MetricLog& log, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f.good()) return;  // timing sidecar is best-effort
  f << "# wall-clock seconds per logged step (not part of the deterministic outputs)\n";
  for (const MetricLog::Row& r : log.rows()) f << r.step << '\t' << r.wall_time_sec << '\n';
}

RewardSpec builtin_spec(const std::string& kind_name) {
  RewardSpec spec;
  spec.kind = reward_kind_from_string(kind_name);
  require(spec.kind != RewardKind::kExternal, "E_CONFIG",
          "eval metric '" + kind_name + "' must name a builtin kind or a configured reward");
  spec.name = kind_name;
  return spec;
}

// Resolve eval metric names against builtin kinds and configured rewards.
std::vector<RewardSpec> eval_metric_specs(const ExperimentConfig& cfg) {
  std::vector<RewardSpec> specs;
  for (const std::string& name : cfg.eval.metrics) {
    const auto it = std::find_if(cfg.rewards.begin(), cfg.rewards.end(),
                                 [&](const RewardSpec& s) { return s.name == name; });
    specs.push_back(it != cfg.rewards.end() ? *it : builtin_spec(name));
  }
  return specs;
}

}  // namespace

void write_resolved_config(const ExperimentConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir + "/resolved_config.json", std::ios::trunc | std::ios::binary);
  require(f.good(), "E_IO", "cannot write resolved config under " + dir);
  f << cfg.resolved.dump(2) << '\n';
}

Checkpoint load_checkpoint_matching(const std::string& path, const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  require(ckpt.config == expected, "E_CKPT",
          "checkpoint model config does not match the experiment config: " + path);
  return ckpt;
}

PretrainOutcome run_pretrain(const ExperimentConfig& cfg, const std::string& init_checkpoint) {
  const std::string dir = cfg.out_dir;
  write_resolved_config(cfg, dir);

  ParamSet params;
  std::size_t start_step = 0;
  if (init_checkpoint.empty()) {
    params = init_params(cfg.model, derive_seed(cfg.seed, kStreamInit));
  } else {
    Checkpoint ckpt = load_checkpoint_matching(init_checkpoint, cfg.model);
    params = std::move(ckpt.params);
    const auto it = ckpt.metadata.find("update_step");
    if (it != ckpt.metadata.end()) start_step = std::stoull(it->second);
  }

  Adam opt(params);
  Rng data_rng(derive_seed(cfg.seed, kStreamPretrainData));
  MetricLog log({"loss", "lr"});

  double last_loss = 0.0;
  for (std::size_t step = start_step; step < cfg.pretrain.steps; ++step) {
    FmBatch batch;
    batch.samples.reserve(cfg.pretrain.batch_size);
    batch.conditions.reserve(cfg.pretrain.batch_size);
    for (std::size_t i = 0; i < cfg.pretrain.batch_size; ++i) {
      TrainPair pair = sample_pair(cfg.task, data_rng);
      batch.samples.push_back(sample_interpolant(pair, data_rng));
      batch.conditions.push_back(drop_condition(pair.c, cfg.model.cond_dropout_prob, data_rng));
    }
    const double lr =
        scheduled_lr(cfg.pretrain.learning_rate, step, cfg.pretrain.warmup_steps, cfg.pretrain.steps);
    last_loss = pretrain_step(params, cfg.model, batch, opt, lr);
    log.append(step + 1, {last_loss, lr});

    if (cfg.pretrain.checkpoint_interval > 0 && (step + 1) % cfg.pretrain.checkpoint_interval == 0 &&
        step + 1 < cfg.pretrain.steps) {
      Checkpoint ckpt{cfg.model, params.clone(),
                      {{"stage", "pretrain"},
                       {"update_step", std::to_string(step + 1)},
                       {"config_hash", cfg.config_hash}}};
      save_checkpoint(dir + "/pretrain_step_" + std::to_string(step + 1) + ".ckpt", ckpt);
    }
  }

  PretrainOutcome out;
  out.final_loss = last_loss;
  out.checkpoint_path = dir + "/pretrain_final.ckpt";
  Checkpoint final_ckpt{cfg.model, params.clone(),
                        {{"stage", "pretrain"},
                         {"update_step", std::to_string(cfg.pretrain.steps)},
                         {"config_hash", cfg.config_hash}}};
  save_checkpoint(out.checkpoint_path, final_ckpt);

  log.write_tsv(dir + "/pretrain_metrics.tsv");
  emit_curves(log, dir + "/curves/pretrain");
  write_timing_log(log, dir + "/pretrain_timing.log");
  out.loss_log = std::move(log);
  return out;
}

HeldoutMetrics evaluate_heldout(const ExperimentConfig& cfg, const ParamSet& params,
                                const RewardBank* active_bank, std::size_t n) {
  require(n >= 1, "E_ARG", "held-out evaluation needs n >= 1");
  const std::vector<RewardSpec> metric_specs = eval_metric_specs(cfg);
  RewardBank eval_bank(cfg.task, metric_specs, cfg.seed, cfg.out_dir + "/tmp");

  Rng prompt_rng(derive_seed(cfg.seed, kStreamHeldoutPrompts));
  const TimeGrid grid{cfg.eval.inference_steps};
  std::vector<ScoreRequest> batch;
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const TrainPair pair = sample_pair(cfg.task, prompt_rng);
    Trajectory traj = rollout(cfg.model, params, pair.c, grid, std::nullopt, 0.0,
                              cfg.eval.guidance_scale, derive_seed(cfg.seed, kStreamHeldoutRollout, i));
    batch.push_back(ScoreRequest{traj.terminal(), pair.c, pair.x1});
  }

  const std::vector<std::vector<double>> raw = eval_bank.raw_scores(batch);
  HeldoutMetrics out;
  for (std::size_t s = 0; s < metric_specs.size(); ++s) {
    std::vector<double> scores;
    scores.reserve(n);
    for (const std::vector<double>& r : raw) scores.push_back(r[s]);
    out.names.push_back(metric_specs[s].name);
    out.means.push_back(mean_of(scores));
    out.stds.push_back(population_std(scores));
  }
  if (active_bank != nullptr && active_bank->calibrated()) {
    const ScoredBatch scored = active_bank->score(batch);
    out.names.push_back("combined");
    out.means.push_back(mean_of(scored.combined));
    out.stds.push_back(population_std(scored.combined));
  }
  return out;
}

GrpoOutcome run_grpo(const ExperimentConfig& cfg, const std::string& init_checkpoint,
                     bool dump_trajectories) {
  const std::string dir = cfg.out_dir;
  write_resolved_config(cfg, dir);
  require(!init_checkpoint.empty(), "E_USAGE", "grpo needs a pretrained base checkpoint");
  Checkpoint base = load_checkpoint_matching(init_checkpoint, cfg.model);
  ParamSet params = std::move(base.params);

  RewardBank bank(cfg.task, cfg.rewards, cfg.seed, dir + "/tmp");

  // Held-out logging covers every active reward plus the configured eval
  // metrics, so non-optimized metrics stay visible during training.
  ExperimentConfig eval_cfg = cfg;
  for (const RewardSpec& s : bank.specs())
    if (std::find(eval_cfg.eval.metrics.begin(), eval_cfg.eval.metrics.end(), s.name) ==
        eval_cfg.eval.metrics.end())
      eval_cfg.eval.metrics.push_back(s.name);

  // Calibration round: base-policy windowed rollouts, one per prompt.
  {
    Rng prompt_rng(derive_seed(cfg.seed, kStreamCalibPrompts));
    const TimeGrid grid{cfg.grpo.t_max};
    WindowSpec window;
    window.s_min = cfg.grpo.window.s_min_lo;
    window.ws = cfg.grpo.window.ws == -1 ? grid.steps - 2
                                         : static_cast<std::size_t>(cfg.grpo.window.ws);
    window.validate(grid);
    std::vector<ScoreRequest> batch;
    for (std::size_t i = 0; i < cfg.calibration_prompts; ++i) {
      const TrainPair pair = sample_pair(cfg.task, prompt_rng);
      Trajectory traj =
          rollout(cfg.model, params, pair.c, grid, window, cfg.grpo.noise_level,
                  cfg.grpo.guidance_scale, derive_seed(cfg.seed, kStreamCalibRollout, i));
      batch.push_back(ScoreRequest{traj.terminal(), pair.c, pair.x1});
    }
    bank.calibrate(batch);
  }

  std::vector<std::string> columns = {"objective",     "mean_ratio",        "clip_fraction",
                                      "mean_kl",       "train_reward_mean", "train_reward_max",
                                      "degenerate_groups", "lr"};
  for (const RewardSpec& s : bank.specs()) columns.push_back("train_raw_" + s.name);
  HeldoutMetrics heldout = evaluate_heldout(eval_cfg, params, &bank, cfg.eval.heldout_size);
  for (const std::string& name : heldout.names) columns.push_back("heldout_" + name);
  MetricLog log(columns);

  if (dump_trajectories) std::filesystem::create_directories(dir + "/trajectories");

  StepCallback on_step = [&](const StepDiagnostics& d) {
    if (d.update_step % cfg.eval.interval == 0)
      heldout = evaluate_heldout(eval_cfg, params, &bank, cfg.eval.heldout_size);
    std::vector<double> row = {d.objective,
                               d.mean_ratio,
                               d.clip_fraction,
                               d.mean_kl,
                               d.round_mean_reward,
                               d.round_max_reward,
                               static_cast<double>(d.groups_discarded),
                               d.lr};
    for (double v : d.round_mean_raw) row.push_back(v);
    for (double v : heldout.means) row.push_back(v);
    log.append(d.update_step, row);

    if (cfg.grpo_checkpoint_interval > 0 && d.update_step % cfg.grpo_checkpoint_interval == 0) {
      Checkpoint ckpt{cfg.model, params.clone(),
                      {{"stage", "grpo"},
                       {"update_step", std::to_string(d.update_step)},
                       {"config_hash", cfg.config_hash}}};
      save_checkpoint(dir + "/grpo_step_" + std::to_string(d.update_step) + ".ckpt", ckpt);
    }
    return true;
  };

  RoundCallback on_round;
  if (dump_trajectories) {
    on_round = [&](std::size_t round, const std::vector<RolloutGroup>& groups) {
      std::ofstream f(dir + "/trajectories/round_" + std::to_string(round) + ".jsonl",
                      std::ios::trunc | std::ios::binary);
      for (const RolloutGroup& g : groups)
        for (const Trajectory& t : g.members) f << t.to_json_string() << '\n';
    };
  }

  GrpoOutcome out;
  const PosttrainResult result =
      posttrain(params, cfg.model, cfg.task, bank, cfg.grpo, cfg.seed, on_step, on_round);
  out.update_steps = result.update_steps;

  out.checkpoint_path = dir + "/grpo_final.ckpt";
  Checkpoint final_ckpt{cfg.model, params.clone(),
                        {{"stage", "grpo"},
                         {"update_step", std::to_string(result.update_steps)},
                         {"config_hash", cfg.config_hash}}};
  save_checkpoint(out.checkpoint_path, final_ckpt);

  log.write_tsv(dir + "/grpo_metrics.tsv");
  emit_curves(log, dir + "/curves/grpo");
  write_timing_log(log, dir + "/grpo_timing.log");
  out.metrics = std::move(log);
  return out;
}

EvalSummary run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path, std::size_t n) {
  require(n >= 1, "E_USAGE", "eval needs n >= 1");
  Checkpoint ckpt = load_checkpoint_matching(checkpoint_path, cfg.model);
  const HeldoutMetrics metrics = evaluate_heldout(cfg, ckpt.params, nullptr, n);
  EvalSummary out;
  out.samples = n;
  out.names = metrics.names;
  out.means = metrics.means;
  out.stds = metrics.stds;
  return out;
}

namespace {

ExperimentConfig arm_config(const ExperimentConfig& base, const std::string& arm_dir) {
  nlohmann::json j = base.resolved;
  j["out_dir"] = arm_dir;
  return parse_config(j);
}

}  // namespace

AblateOutcome run_ablate(const ExperimentConfig& cfg, const std::string& preset,
                         const std::string& init_checkpoint) {
  const std::string root = cfg.out_dir + "/ablate_" + preset;
  std::filesystem::create_directories(root);

  std::string base_ckpt = init_checkpoint;
  if (base_ckpt.empty()) {
    ExperimentConfig pre = arm_config(cfg, root + "/base");
    base_ckpt = run_pretrain(pre).checkpoint_path;
  }

  struct Arm {
    std::string name;
    nlohmann::json patch;  // applied onto resolved["grpo"]
  };
  std::vector<Arm> arms;
  if (preset == "noise_level") {
    for (double a : {0.2, 0.3, 0.4}) {
      char name[16];
      std::snprintf(name, sizeof(name), "a_%g", a);
      arms.push_back({name, {{"noise_level", a}}});
    }
  } else if (preset == "window") {
    arms.push_back({"windowed", {{"window", {{"s_min_range", {1, 3}}, {"size", 2}}}}});
    arms.push_back({"full_path", {{"window", {{"s_min_range", {1, 1}}, {"size", -1}}}}});
  } else if (preset == "single_vs_multi") {
    auto reward = [](const std::string& kind, double weight) {
      return nlohmann::json{{"kind", kind}, {"weight", weight}};
    };
    arms.push_back({"target_loglik", {{"rewards", {reward("target_loglik", 1.0)}}}});
    arms.push_back({"ref_similarity", {{"rewards", {reward("ref_similarity", 1.0)}}}});
    arms.push_back({"fidelity", {{"rewards", {reward("fidelity", 1.0)}}}});
    arms.push_back({"multi",
                    {{"rewards",
                      {reward("target_loglik", 0.6), reward("ref_similarity", 1.0),
                       reward("fidelity", 1.0)}}}});
  } else {
    fail("E_USAGE", "unknown ablate preset '" + preset +
                        "' (expected noise_level, window or single_vs_multi)");
  }

  AblateOutcome out;
  for (const Arm& arm : arms) {
    nlohmann::json j = cfg.resolved;
    j["out_dir"] = root + "/" + arm.name;
    for (const auto& item : arm.patch.items()) j["grpo"][item.key()] = item.value();
    ExperimentConfig arm_cfg = parse_config(j);
    std::cout << "[ablate] arm " << arm.name << " -> " << arm_cfg.out_dir << "\n";
    run_grpo(arm_cfg, base_ckpt, /*dump_trajectories=*/false);
    out.arms.push_back(arm.name);
    out.arm_dirs.push_back(arm_cfg.out_dir);
  }
  return out;
}

}  // namespace flowlab
