#include "flowlab/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "flowlab/errors.hpp"
#include "flowlab/stats.hpp"

namespace flowlab {

void GrpoConfig::validate() const {
  require(group_size >= 2, "E_CONFIG", "group size must be >= 2");
  require(clip_range > 0.0, "E_CONFIG", "clip range must be positive");
  require(kl_beta >= 0.0, "E_CONFIG", "kl beta must be >= 0");
  require(batch_size >= 1, "E_CONFIG", "batch size must be >= 1");
  require(prompts_per_round >= 1 && repeats >= 1, "E_CONFIG", "need at least one prompt per round");
  require(updates_per_iteration >= 1, "E_CONFIG", "updates_per_iteration must be >= 1");
  require(noise_level >= 0.0, "E_CONFIG", "noise level must be >= 0");
  require(t_min >= 3 && t_min <= t_max, "E_CONFIG", "invalid denoising step range");
  require(window.s_min_lo >= 1 && window.s_min_lo <= window.s_min_hi, "E_CONFIG",
          "invalid window start range");
  require(window.ws == -1 || window.ws >= 1, "E_CONFIG", "window size must be >= 1 (or -1 for full)");
  if (window.ws != -1) {
    // must fit the smallest grid at the latest start
    require(window.s_min_hi + static_cast<std::size_t>(window.ws) - 1 <= t_min - 2, "E_CONFIG",
            "SDE window does not fit the smallest denoising grid");
  }
  require(learning_rate > 0.0, "E_CONFIG", "learning rate must be positive");
  require(guidance_scale >= 0.0, "E_CONFIG", "guidance scale must be >= 0");
}

AdvantageResult compute_advantages(const std::vector<double>& rewards) {
  require(rewards.size() >= 2, "E_ARG", "advantage normalization needs G >= 2");
  AdvantageResult out;
  const double m = mean_of(rewards);
  const double s = population_std(rewards);
  if (s < 1e-8) {
    out.degenerate = true;
    out.advantages.assign(rewards.size(), 0.0);
    return out;
  }
  out.advantages.reserve(rewards.size());
  for (double r : rewards) out.advantages.push_back((r - m) / s);
  return out;
}

std::size_t discard_degenerate_groups(std::vector<RolloutGroup>& groups) {
  const std::size_t before = groups.size();
  groups.erase(std::remove_if(groups.begin(), groups.end(),
                              [](const RolloutGroup& g) { return g.degenerate; }),
               groups.end());
  return before - groups.size();
}

namespace {

struct RoundPlan {
  TimeGrid grid;
  WindowSpec window;
};

RoundPlan sample_round_plan(const GrpoConfig& grpo, std::uint64_t master_seed,
                            std::size_t round_index) {
  Rng rng(derive_seed(master_seed, /*stream=*/0x10, round_index));
  RoundPlan plan;
  plan.grid.steps = static_cast<std::size_t>(
      rng.uniform_int(static_cast<int>(grpo.t_min), static_cast<int>(grpo.t_max)));
  plan.window.s_min = static_cast<std::size_t>(rng.uniform_int(
      static_cast<int>(grpo.window.s_min_lo), static_cast<int>(grpo.window.s_min_hi)));
  if (grpo.window.ws == -1) {
    plan.window.s_min = 1;
    plan.window.ws = plan.grid.steps - 2;  // every eligible step
  } else {
    plan.window.ws = static_cast<std::size_t>(grpo.window.ws);
  }
  plan.window.validate(plan.grid);
  return plan;
}

}  // namespace

std::vector<RolloutGroup> collect_groups(const ModelConfig& cfg, const ParamSet& params,
                                         const TaskSpec& task, const RewardBank& rewards,
                                         const GrpoConfig& grpo, std::uint64_t master_seed,
                                         std::size_t round_index) {
  grpo.validate();
  const RoundPlan plan = sample_round_plan(grpo, master_seed, round_index);
  auto behavior = std::make_shared<const ParamSet>(params.clone());

  Rng prompt_rng(derive_seed(master_seed, /*stream=*/0x20, round_index));
  const std::size_t n_groups = grpo.prompts_per_round * grpo.repeats;

  std::vector<RolloutGroup> groups;
  groups.reserve(n_groups);
  for (std::size_t p = 0; p < n_groups; ++p) {
    const TrainPair pair = sample_pair(task, prompt_rng);
    RolloutGroup group;
    group.condition = pair.c;
    group.reference = pair.x1;
    group.behavior = behavior;
    group.members.reserve(grpo.group_size);

    std::vector<ScoreRequest> batch;
    batch.reserve(grpo.group_size);
    for (std::size_t g = 0; g < grpo.group_size; ++g) {
      const std::uint64_t rollout_seed =
          derive_seed(master_seed, /*stream=*/0x30, (round_index * n_groups + p) * grpo.group_size + g);
      Trajectory traj = rollout(cfg, params, pair.c, plan.grid, plan.window, grpo.noise_level,
                                grpo.guidance_scale, rollout_seed);
      batch.push_back(ScoreRequest{traj.terminal(), pair.c, pair.x1});
      group.members.push_back(std::move(traj));
    }

    const ScoredBatch scored = rewards.score(batch);
    group.raw_rewards = scored.raw;
    group.rewards = scored.combined;
    AdvantageResult adv = compute_advantages(group.rewards);
    group.advantages = std::move(adv.advantages);
    group.degenerate = adv.degenerate;
    groups.push_back(std::move(group));
  }
  return groups;
}

double step_ratio(const ModelConfig& cfg, const ParamSet& params, const Trajectory& traj,
                  std::size_t step_index) {
  Tape tape;
  BoundModel model = bind_model_frozen(tape, cfg, params);
  Value lp_new = transition_logpdf(tape, model, traj, step_index);
  Value lp_old = transition_logpdf_stored(tape, traj, step_index);
  const double ratio = std::exp(tape.item(lp_new) - tape.item(lp_old));
  require(std::isfinite(ratio), "E_NONFINITE", "non-finite importance ratio");
  return ratio;
}

double kl_transition(const ModelConfig& cfg, const ParamSet& params, const ParamSet& theta_ref,
                     const Trajectory& traj, std::size_t step_index) {
  require(step_index < traj.steps.size(), "E_ARG", "kl_transition: step index out of range");
  const StepRecord& rec = traj.steps[step_index];
  require(rec.kind == StepKind::kSde, "E_ARG", "kl_transition: not an SDE step");

  const Tensor& x = traj.states[step_index];
  const double dt = traj.grid().dt();
  const Tensor v_new = forward_value(cfg, params, x, traj.condition, rec.t, traj.guidance_scale);
  const Tensor v_ref = forward_value(cfg, theta_ref, x, traj.condition, rec.t, traj.guidance_scale);
  const Tensor mean_new = sde_mean(x, v_new, rec.t, dt, traj.noise_level);
  const Tensor mean_ref = sde_mean(x, v_ref, rec.t, dt, traj.noise_level);

  double sq = 0.0;
  for (std::size_t i = 0; i < mean_new.size(); ++i) {
    const double d = mean_new.data[i] - mean_ref.data[i];
    sq += d * d;
  }
  return sq / (2.0 * rec.sigma * rec.sigma * dt);
}

Value grpo_objective_on_tape(Tape& tape, const ModelConfig& cfg, ParamSet& params,
                             const ParamSet& theta_ref, const std::vector<TrajectoryItem>& items,
                             const GrpoConfig& grpo, ObjectiveStats* stats) {
  require(!items.empty(), "E_ARG", "grpo objective: empty batch");
  const std::size_t n = items.size();
  const std::size_t d = cfg.data_dim;

  // One round's trajectories share grid and window; verify and gather the
  // SDE step indices from the first member.
  const Trajectory& first = *items[0].traj;
  std::vector<std::size_t> sde_steps;
  for (const StepRecord& s : first.steps)
    if (s.kind == StepKind::kSde) sde_steps.push_back(s.index);
  require(!sde_steps.empty(), "E_ARG", "grpo objective: no SDE steps in trajectory");
  for (const TrajectoryItem& item : items) {
    require(item.traj->grid_steps == first.grid_steps && item.traj->sde_count() == sde_steps.size(),
            "E_ARG", "grpo objective: mixed time grids in one batch");
  }

  BoundModel model = bind_model(tape, cfg, params, /*trainable=*/true);
  BoundModel ref_model = bind_model_frozen(tape, cfg, theta_ref);

  Tensor adv_t({n});
  for (std::size_t i = 0; i < n; ++i) adv_t.data[i] = items[i].advantage;
  Value adv = tape.constant(std::move(adv_t));

  Tensor cond_rows({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) cond_rows.at2(i, j) = items[i].traj->condition.data[j];
  Value conds = tape.constant(std::move(cond_rows));

  const double dt = first.grid().dt();
  const double lo = 1.0 - grpo.clip_range;
  const double hi = 1.0 + grpo.clip_range;

  double ratio_acc = 0.0, kl_acc = 0.0;
  std::size_t clipped = 0, terms = 0;

  Value per_traj;  // [n], sum over SDE steps of the per-step surrogate
  for (std::size_t si = 0; si < sde_steps.size(); ++si) {
    const std::size_t k = sde_steps[si];
    Tensor x_rows({n, d}), next_rows({n, d}), old_mean_rows({n, d});
    double t_k = 0.0, sigma_k = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Trajectory& traj = *items[i].traj;
      const StepRecord& rec = traj.steps[k];
      require(rec.kind == StepKind::kSde, "E_ARG", "grpo objective: window misalignment");
      t_k = rec.t;
      sigma_k = rec.sigma;
      for (std::size_t j = 0; j < d; ++j) {
        x_rows.at2(i, j) = traj.states[k].data[j];
        next_rows.at2(i, j) = traj.states[k + 1].data[j];
        old_mean_rows.at2(i, j) = rec.mean.data[j];
      }
    }

    Value x = tape.constant(std::move(x_rows));
    Value v = guided_forward(tape, model, x, conds, t_k, grpo.guidance_scale);
    const SdeMeanCoeffs coeff = sde_mean_coeffs(t_k, dt, first.noise_level);
    Value mean_new = tape.axpy(coeff.v_coef, v, coeff.x_coef, x);
    const double kernel_std = sigma_k * std::sqrt(dt);

    Value next = tape.constant(std::move(next_rows));
    Value lp_new = gaussian_log_density_rows(tape, next, mean_new, kernel_std);
    Value lp_old =
        gaussian_log_density_rows(tape, next, tape.constant(std::move(old_mean_rows)), kernel_std);
    Value ratio = tape.exp(tape.sub(lp_new, lp_old));

    Value surrogate = tape.min2(tape.mul(ratio, adv), tape.mul(tape.clip(ratio, lo, hi), adv));

    Value v_ref = guided_forward(tape, ref_model, x, conds, t_k, grpo.guidance_scale);
    Value mean_ref = tape.axpy(coeff.v_coef, v_ref, coeff.x_coef, x);
    Value kl =
        tape.scale(tape.row_sum(tape.square(tape.sub(mean_new, mean_ref))),
                   1.0 / (2.0 * kernel_std * kernel_std));

    Value step_term = tape.axpy(1.0, surrogate, -grpo.kl_beta, kl);
    per_traj = si == 0 ? step_term : tape.add(per_traj, step_term);

    const Tensor& ratio_v = tape.value(ratio);
    const Tensor& kl_v = tape.value(kl);
    for (std::size_t i = 0; i < n; ++i) {
      require(std::isfinite(ratio_v.data[i]), "E_NONFINITE", "non-finite importance ratio");
      ratio_acc += ratio_v.data[i];
      kl_acc += kl_v.data[i];
      if (ratio_v.data[i] < lo || ratio_v.data[i] > hi) ++clipped;
      ++terms;
    }
  }

  if (stats != nullptr) {
    stats->mean_ratio = ratio_acc / static_cast<double>(terms);
    stats->clip_fraction = static_cast<double>(clipped) / static_cast<double>(terms);
    stats->mean_kl = kl_acc / static_cast<double>(terms);
  }

  // Average over the window steps, then over batch items.
  Value scaled = tape.scale(per_traj, 1.0 / static_cast<double>(sde_steps.size()));
  return tape.scale(tape.sum(scaled), 1.0 / static_cast<double>(n));
}

double grpo_objective(const ModelConfig& cfg, ParamSet& params, const ParamSet& theta_ref,
                      const std::vector<RolloutGroup>& groups, const GrpoConfig& grpo) {
  std::vector<TrajectoryItem> items;
  for (const RolloutGroup& g : groups) {
    require(!g.degenerate, "E_ARG", "grpo objective: degenerate group not discarded");
    for (std::size_t i = 0; i < g.members.size(); ++i)
      items.push_back(TrajectoryItem{&g.members[i], g.advantages[i]});
  }
  Tape tape;
  return tape.item(grpo_objective_on_tape(tape, cfg, params, theta_ref, items, grpo));
}

UpdateDiagnostics grpo_update(ParamSet& params, const ModelConfig& cfg, const ParamSet& theta_ref,
                              const std::vector<RolloutGroup>& groups, const GrpoConfig& grpo,
                              Adam& opt, double lr, std::uint64_t shuffle_seed) {
  require(!groups.empty(), "E_ARG", "grpo update: no surviving groups");

  std::vector<TrajectoryItem> items;
  for (const RolloutGroup& g : groups)
    for (std::size_t i = 0; i < g.members.size(); ++i)
      items.push_back(TrajectoryItem{&g.members[i], g.advantages[i]});

  // Deterministic Fisher-Yates regrouping.
  Rng rng(derive_seed(shuffle_seed, /*stream=*/0x40));
  for (std::size_t i = items.size(); i > 1; --i)
    std::swap(items[i - 1], items[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

  std::vector<std::vector<TrajectoryItem>> batches;
  for (std::size_t start = 0; start < items.size(); start += grpo.batch_size) {
    const std::size_t end = std::min(items.size(), start + grpo.batch_size);
    batches.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(start),
                         items.begin() + static_cast<std::ptrdiff_t>(end));
  }

  UpdateDiagnostics diag;
  for (std::size_t u = 0; u < grpo.updates_per_iteration; ++u) {
    const std::vector<TrajectoryItem>& batch = batches[u % batches.size()];
    params.zero_grad();
    Tape tape;
    ObjectiveStats stats;
    Value objective = grpo_objective_on_tape(tape, cfg, params, theta_ref, batch, grpo, &stats);
    const double value = tape.item(objective);
    require(std::isfinite(value), "E_NONFINITE", "non-finite GRPO objective");
    tape.backward(tape.scale(objective, -1.0));  // ascent
    opt.step(params, lr);

    diag.updates += 1;
    diag.objective += value;
    diag.mean_ratio += stats.mean_ratio;
    diag.clip_fraction += stats.clip_fraction;
    diag.mean_kl += stats.mean_kl;
  }
  const double inv = 1.0 / static_cast<double>(diag.updates);
  diag.objective *= inv;
  diag.mean_ratio *= inv;
  diag.clip_fraction *= inv;
  diag.mean_kl *= inv;
  return diag;
}

PosttrainResult posttrain(ParamSet& params, const ModelConfig& cfg, const TaskSpec& task,
                          RewardBank& rewards, const GrpoConfig& grpo, std::uint64_t master_seed,
                          const StepCallback& callback, const RoundCallback& round_callback) {
  grpo.validate();
  require(rewards.calibrated(), "E_STATE", "reward bank must be calibrated before posttrain");

  const ParamSet theta_ref = params.clone();
  Adam opt(params);
  PosttrainResult result;
  std::size_t consecutive_skips = 0;

  bool keep_going = true;
  while (keep_going && result.update_steps < grpo.total_update_steps) {
    const std::size_t round = result.rounds++;
    std::vector<RolloutGroup> groups =
        collect_groups(cfg, params, task, rewards, grpo, master_seed, round);
    if (round_callback) round_callback(round, groups);

    double reward_sum = 0.0, reward_max = -1e300;
    std::vector<double> raw_sum(rewards.specs().size(), 0.0);
    std::size_t n_traj = 0;
    for (const RolloutGroup& g : groups) {
      for (std::size_t i = 0; i < g.rewards.size(); ++i) {
        reward_sum += g.rewards[i];
        reward_max = std::max(reward_max, g.rewards[i]);
        for (std::size_t s = 0; s < raw_sum.size(); ++s) raw_sum[s] += g.raw_rewards[i][s];
        ++n_traj;
      }
    }

    const std::size_t groups_collected = groups.size();
    const std::size_t dropped = discard_degenerate_groups(groups);
    if (groups.empty()) {
      std::cerr << "warning: round " << round
                << " discarded all groups (zero within-group reward std); skipping updates\n";
      ++result.rounds_skipped;
      require(++consecutive_skips < 10, "E_STATE",
              "10 consecutive collection rounds were fully degenerate; rewards carry no signal");
      continue;
    }
    consecutive_skips = 0;

    for (std::size_t u = 0; u < grpo.updates_per_iteration && keep_going &&
                            result.update_steps < grpo.total_update_steps;
         ++u) {
      const double lr =
          scheduled_lr(grpo.learning_rate, result.update_steps, 0, grpo.total_update_steps);
      // Single-update iteration inside grpo_update keeps the regrouping
      // deterministic per (round, update) pair.
      GrpoConfig one = grpo;
      one.updates_per_iteration = 1;
      UpdateDiagnostics diag = grpo_update(params, cfg, theta_ref, groups, one, opt, lr,
                                           derive_seed(master_seed, 0x50, round * 1000 + u));
      ++result.update_steps;

      StepDiagnostics step;
      step.update_step = result.update_steps;
      step.round_index = round;
      step.lr = lr;
      step.objective = diag.objective;
      step.mean_ratio = diag.mean_ratio;
      step.clip_fraction = diag.clip_fraction;
      step.mean_kl = diag.mean_kl;
      step.round_mean_reward = reward_sum / static_cast<double>(n_traj);
      step.round_max_reward = reward_max;
      step.round_mean_raw.resize(raw_sum.size());
      for (std::size_t s = 0; s < raw_sum.size(); ++s)
        step.round_mean_raw[s] = raw_sum[s] / static_cast<double>(n_traj);
      step.groups_collected = groups_collected;
      step.groups_discarded = dropped;
      step.behavior_version = groups.front().behavior->version();
      if (callback && !callback(step)) keep_going = false;
    }
  }
  return result;
}

}  // namespace flowlab
