#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "flowlab/config.hpp"
#include "flowlab/errors.hpp"
#include "flowlab/harness.hpp"

namespace {

flowlab::ExperimentConfig load_with_overrides(const std::string& config_path,
                                              const std::optional<std::uint64_t>& seed,
                                              const std::string& out_dir) {
  std::ifstream f(config_path);
  flowlab::require(f.good(), "E_IO", "cannot open config file: " + config_path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    flowlab::fail("E_CONFIG", "config is not valid JSON: " + std::string(e.what()));
  }
  if (seed) j["seed"] = *seed;
  if (!out_dir.empty()) j["out_dir"] = out_dir;
  return flowlab::parse_config(j);
}

void print_summary(const flowlab::EvalSummary& summary) {
  std::printf("%-16s %14s %14s\n", "metric", "mean", "std");
  for (std::size_t i = 0; i < summary.names.size(); ++i)
    std::printf("%-16s %14.6f %14.6f\n", summary.names[i].c_str(), summary.means[i],
                summary.stds[i]);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional flow-matching lab with GRPO post-training"};
  app.require_subcommand(1);

  std::string config_path, init_ckpt, ckpt_path, compare_ckpt, preset, out_dir;
  std::optional<std::uint64_t> seed;
  std::size_t eval_n = 64;
  bool dump_trajectories = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    cmd->add_option("--seed", seed, "override the config's master seed");
    cmd->add_option("--out", out_dir, "override the config's output directory");
    cmd->add_flag("--dump-trajectories", dump_trajectories,
                  "dump rollout trajectories per collection round");
  };

  CLI::App* pretrain = app.add_subcommand("pretrain", "flow-matching pretraining");
  add_common(pretrain);
  pretrain->add_option("--init", init_ckpt, "resume from a checkpoint");

  CLI::App* grpo = app.add_subcommand("grpo", "GRPO post-training from a base checkpoint");
  add_common(grpo);
  grpo->add_option("--init", init_ckpt, "pretrained base checkpoint")->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "held-out evaluation of a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint to evaluate")->required();
  eval_cmd->add_option("--n", eval_n, "number of held-out conditions");
  eval_cmd->add_option("--compare", compare_ckpt, "second checkpoint for a comparison table");

  CLI::App* ablate = app.add_subcommand("ablate", "run a preset ablation sweep");
  add_common(ablate);
  ablate->add_option("--preset", preset, "noise_level | window | single_vs_multi")->required();
  ablate->add_option("--init", init_ckpt, "base checkpoint shared by all arms");

  CLI11_PARSE(app, argc, argv);

  try {
    const flowlab::ExperimentConfig cfg = load_with_overrides(config_path, seed, out_dir);
    if (app.got_subcommand(pretrain)) {
      const flowlab::PretrainOutcome out = flowlab::run_pretrain(cfg, init_ckpt);
      std::cout << "final loss " << out.final_loss << "\ncheckpoint " << out.checkpoint_path
                << "\n";
    } else if (app.got_subcommand(grpo)) {
      const flowlab::GrpoOutcome out = flowlab::run_grpo(cfg, init_ckpt, dump_trajectories);
      std::cout << "update steps " << out.update_steps << "\ncheckpoint " << out.checkpoint_path
                << "\n";
    } else if (app.got_subcommand(eval_cmd)) {
      const flowlab::EvalSummary summary = flowlab::run_eval(cfg, ckpt_path, eval_n);
      std::cout << "checkpoint " << ckpt_path << " (n=" << summary.samples << ")\n";
      print_summary(summary);
      if (!compare_ckpt.empty()) {
        const flowlab::EvalSummary other = flowlab::run_eval(cfg, compare_ckpt, eval_n);
        std::cout << "\ncheckpoint " << compare_ckpt << " (n=" << other.samples << ")\n";
        print_summary(other);
        std::printf("\n%-16s %14s\n", "metric", "delta");
        for (std::size_t i = 0; i < summary.names.size(); ++i)
          std::printf("%-16s %14.6f\n", summary.names[i].c_str(),
                      summary.means[i] - other.means[i]);
      }
    } else if (app.got_subcommand(ablate)) {
      const flowlab::AblateOutcome out = flowlab::run_ablate(cfg, preset, init_ckpt);
      for (std::size_t i = 0; i < out.arms.size(); ++i)
        std::cout << "arm " << out.arms[i] << " -> " << out.arm_dirs[i] << "\n";
    }
  } catch (const flowlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: E_INTERNAL: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
