#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowlab/grpo.hpp"
#include "flowlab/model.hpp"
#include "flowlab/rewards.hpp"
#include "flowlab/tasks.hpp"

namespace flowlab {

struct PretrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 128;
  double learning_rate = 3e-3;
  std::size_t warmup_steps = 200;
  std::size_t checkpoint_interval = 0;  // 0 = final checkpoint only
};

struct EvalConfig {
  std::size_t heldout_size = 64;
  std::size_t interval = 5;          // update steps between held-out evals
  std::size_t inference_steps = 10;  // all-ODE denoising steps
  double guidance_scale = 1.0;
  // metric names to report: builtin reward kinds and/or configured reward names
  std::vector<std::string> metrics = {"target_loglik", "ref_similarity", "fidelity"};
};

// Fully resolved experiment description. Parsing rejects unknown keys and
// materializes every default into `resolved`, whose dump (and hash) make a
// run reproducible from its own output directory.
struct ExperimentConfig {
  TaskSpec task;
  ModelConfig model;
  PretrainConfig pretrain;
  GrpoConfig grpo;
  std::vector<RewardSpec> rewards;
  std::size_t calibration_prompts = 16;
  std::size_t grpo_checkpoint_interval = 0;  // 0 = final checkpoint only
  EvalConfig eval;
  std::uint64_t seed = 1234;
  std::string out_dir = "runs/experiment";

  nlohmann::json resolved;  // all defaults materialized
  std::string config_hash;  // fnv1a64 of the resolved dump
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

// Canonical starting points for the experiments the harness ships with.
nlohmann::json preset_config(const std::string& name);  // "gauss1d" | "circle2d"

}  // namespace flowlab
