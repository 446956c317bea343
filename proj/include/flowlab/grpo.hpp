#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "flowlab/model.hpp"
#include "flowlab/optim.hpp"
#include "flowlab/rewards.hpp"
#include "flowlab/samplers.hpp"
#include "flowlab/tasks.hpp"

namespace flowlab {

// Window sampling range for data collection; ws = -1 selects the full
// eligible range (steps 1 .. T-2) regardless of where the window starts.
struct WindowConfig {
  std::size_t s_min_lo = 1;
  std::size_t s_min_hi = 3;
  long ws = 2;
};

struct GrpoConfig {
  std::size_t group_size = 8;  // G
  double clip_range = 0.2;     // epsilon
  double kl_beta = 0.01;       // beta
  std::size_t prompts_per_round = 6;
  std::size_t repeats = 4;
  std::size_t batch_size = 12;  // trajectories per update batch
  std::size_t updates_per_iteration = 4;
  double noise_level = 0.3;  // a
  WindowConfig window;
  std::size_t t_min = 7;  // denoising step count range, inclusive
  std::size_t t_max = 10;
  double learning_rate = 1e-3;
  std::size_t total_update_steps = 200;
  double guidance_scale = 1.0;

  void validate() const;
};

// G trajectories sharing one condition, their rewards and normalized
// advantages. The behavior snapshot is shared across the round's groups.
struct RolloutGroup {
  Tensor condition;
  Tensor reference;  // clean x1 paired with the condition
  std::vector<Trajectory> members;
  std::vector<std::vector<double>> raw_rewards;  // [member][reward spec]
  std::vector<double> rewards;                   // combined
  std::vector<double> advantages;
  bool degenerate = false;
  std::shared_ptr<const ParamSet> behavior;  // theta_old
};

struct AdvantageResult {
  std::vector<double> advantages;
  bool degenerate = false;
};

// (r_i - mean) / population std; groups with (near-)zero std are flagged.
AdvantageResult compute_advantages(const std::vector<double>& rewards);

// Removes flagged groups in place; returns how many were dropped.
std::size_t discard_degenerate_groups(std::vector<RolloutGroup>& groups);

// One collection round: prompts_per_round * repeats conditions, G windowed
// SDE rollouts each, scored on terminal samples. T and the window start are
// drawn once per round from the configured ranges.
std::vector<RolloutGroup> collect_groups(const ModelConfig& cfg, const ParamSet& params,
                                         const TaskSpec& task, const RewardBank& rewards,
                                         const GrpoConfig& grpo, std::uint64_t master_seed,
                                         std::size_t round_index);

// Importance ratio of one SDE transition: the new-policy density over the
// stored behavior density (behavior side comes from recorded means only).
double step_ratio(const ModelConfig& cfg, const ParamSet& params, const Trajectory& traj,
                  std::size_t step_index);

// Closed-form per-step KL between same-variance Gaussian transition kernels.
double kl_transition(const ModelConfig& cfg, const ParamSet& params, const ParamSet& theta_ref,
                     const Trajectory& traj, std::size_t step_index);

struct TrajectoryItem {
  const Trajectory* traj = nullptr;
  double advantage = 0.0;
};

struct ObjectiveStats {
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
};

// Clipped-ratio objective with per-step KL penalty, averaged over the batch
// items and over each trajectory's SDE steps. All items must share one time
// grid (they come from a single collection round).
Value grpo_objective_on_tape(Tape& tape, const ModelConfig& cfg, ParamSet& params,
                             const ParamSet& theta_ref, const std::vector<TrajectoryItem>& items,
                             const GrpoConfig& grpo, ObjectiveStats* stats = nullptr);

// Convenience evaluation over whole groups (no update).
double grpo_objective(const ModelConfig& cfg, ParamSet& params, const ParamSet& theta_ref,
                      const std::vector<RolloutGroup>& groups, const GrpoConfig& grpo);

struct UpdateDiagnostics {
  std::size_t updates = 0;
  double objective = 0.0;      // mean over the iteration's updates
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
};

// Regroups surviving trajectories into batches and performs
// updates_per_iteration ascent steps on the objective.
UpdateDiagnostics grpo_update(ParamSet& params, const ModelConfig& cfg, const ParamSet& theta_ref,
                              const std::vector<RolloutGroup>& groups, const GrpoConfig& grpo,
                              Adam& opt, double lr, std::uint64_t shuffle_seed);

struct StepDiagnostics {
  std::size_t update_step = 0;
  std::size_t round_index = 0;
  double lr = 0.0;
  double objective = 0.0;
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
  double round_mean_reward = 0.0;
  double round_max_reward = 0.0;
  std::vector<double> round_mean_raw;  // per reward spec
  std::size_t groups_collected = 0;
  std::size_t groups_discarded = 0;
  std::uint64_t behavior_version = 0;
};

// Called once per update step; returning false stops training.
using StepCallback = std::function<bool(const StepDiagnostics&)>;

// Called after every collection round with the raw groups (pre-discard).
using RoundCallback = std::function<void(std::size_t round_index, const std::vector<RolloutGroup>&)>;

struct PosttrainResult {
  std::size_t update_steps = 0;
  std::size_t rounds = 0;
  std::size_t rounds_skipped = 0;  // all-degenerate collection rounds
};

// Full post-training loop: collect -> discard -> update, with theta_old
// refreshed every round and theta_ref frozen at entry.
PosttrainResult posttrain(ParamSet& params, const ModelConfig& cfg, const TaskSpec& task,
                          RewardBank& rewards, const GrpoConfig& grpo, std::uint64_t master_seed,
                          const StepCallback& callback, const RoundCallback& round_callback = {});

}  // namespace flowlab
