#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowlab/tasks.hpp"
#include "flowlab/tensor.hpp"

namespace flowlab {

enum class RewardKind { kTargetLoglik, kRefSimilarity, kFidelity, kExternal };

RewardKind reward_kind_from_string(const std::string& s);
std::string to_string(RewardKind k);

// Named scalar scoring function plus its combination weight and the
// normalization std estimated from a calibration round.
struct RewardSpec {
  std::string name;
  RewardKind kind = RewardKind::kTargetLoglik;
  double weight = 1.0;  // lambda
  double norm_std = 1.0;
  bool std_estimated = false;

  // external scorers only
  std::vector<std::string> command;
  double timeout_sec = 30.0;
};

// Frozen random projection used by the reference-similarity reward; built
// once per experiment seed so repeated calls are identical.
struct Projection {
  Tensor matrix;  // [feature_dim, data_dim]
};

Projection make_projection(std::size_t feature_dim, std::size_t data_dim, std::uint64_t seed);

// Log density of x under the task's clean distribution (no-reference quality).
double reward_target_loglik(const TaskSpec& task, const Tensor& x);

// Cosine similarity between projected features of x and the reference.
double reward_reference_similarity(const Tensor& x, const Tensor& x1, const Projection& proj);

// Negative mean squared error to the reference.
double reward_fidelity(const Tensor& x, const Tensor& x1);

// Population std of collected raw scores, floored at 1e-8; needs >= 2 scores.
double estimate_std(const std::string& reward_name, const std::vector<double>& scores);

// Weighted std-normalized sum over components; every spec must be calibrated.
double combine_multi(const std::vector<RewardSpec>& specs, const std::vector<double>& raw);

// External scorer protocol: write request lines `id<TAB>dim<TAB>v1,v2,...`,
// invoke `command... request response`, read back `id<TAB>score` lines.
struct ExternalScorer {
  std::vector<std::string> command;
  double timeout_sec = 30.0;
};

std::vector<double> external_score(const ExternalScorer& scorer, const std::vector<Tensor>& samples,
                                   const std::string& scratch_dir);

struct ScoreRequest {
  Tensor x;   // terminal sample
  Tensor c;   // condition
  Tensor x1;  // reference
};

struct ScoredBatch {
  std::vector<std::vector<double>> raw;  // [sample][spec]
  std::vector<double> combined;
};

// All reward functions of one experiment behind a single scoring surface.
class RewardBank {
 public:
  RewardBank(TaskSpec task, std::vector<RewardSpec> specs, std::uint64_t projection_seed,
             std::string scratch_dir);

  const std::vector<RewardSpec>& specs() const { return specs_; }
  std::vector<std::vector<double>> raw_scores(const std::vector<ScoreRequest>& batch) const;
  ScoredBatch score(const std::vector<ScoreRequest>& batch) const;

  // Estimate per-reward normalization stds from a calibration batch.
  void calibrate(const std::vector<ScoreRequest>& batch);
  bool calibrated() const;

 private:
  TaskSpec task_;
  std::vector<RewardSpec> specs_;
  Projection projection_;
  std::string scratch_dir_;
};

}  // namespace flowlab
