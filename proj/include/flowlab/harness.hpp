#pragma once

#include <string>
#include <vector>

#include "flowlab/checkpoint.hpp"
#include "flowlab/config.hpp"
#include "flowlab/metrics.hpp"

namespace flowlab {

struct PretrainOutcome {
  std::string checkpoint_path;
  MetricLog loss_log;
  double final_loss = 0.0;
};

// Flow-matching pretraining per the config's pretrain section; writes the
// resolved config, a per-step loss log, curve files and a final checkpoint
// under out_dir. A nonempty init_checkpoint resumes its step counter.
PretrainOutcome run_pretrain(const ExperimentConfig& cfg, const std::string& init_checkpoint = "");

struct HeldoutMetrics {
  std::vector<std::string> names;  // eval metrics (+ "combined" when available)
  std::vector<double> means;
  std::vector<double> stds;
};

// All-ODE inference rollouts on a fresh held-out condition set (seed stream
// disjoint from training prompts); raw per-metric summaries.
HeldoutMetrics evaluate_heldout(const ExperimentConfig& cfg, const ParamSet& params,
                                const RewardBank* active_bank, std::size_t n);

struct GrpoOutcome {
  std::string checkpoint_path;
  MetricLog metrics;
  std::size_t update_steps = 0;
};

GrpoOutcome run_grpo(const ExperimentConfig& cfg, const std::string& init_checkpoint,
                     bool dump_trajectories = false);

struct EvalSummary {
  std::size_t samples = 0;
  std::vector<std::string> names;
  std::vector<double> means;
  std::vector<double> stds;
};

EvalSummary run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path, std::size_t n);

struct AblateOutcome {
  std::vector<std::string> arms;
  std::vector<std::string> arm_dirs;
};

// Runs a preset sweep ("noise_level" | "window" | "single_vs_multi") with a
// shared seed; each arm posts its own metric log and curves. An empty
// init_checkpoint pretrains one shared base model first.
AblateOutcome run_ablate(const ExperimentConfig& cfg, const std::string& preset,
                         const std::string& init_checkpoint = "");

// Shared helpers.
void write_resolved_config(const ExperimentConfig& cfg, const std::string& dir);
Checkpoint load_checkpoint_matching(const std::string& path, const ModelConfig& expected);

}  // namespace flowlab
