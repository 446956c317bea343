#include "flowlab/rewards.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <signal.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "flowlab/errors.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/stats.hpp"

namespace flowlab {

RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "target_loglik") return RewardKind::kTargetLoglik;
  if (s == "ref_similarity") return RewardKind::kRefSimilarity;
  if (s == "fidelity") return RewardKind::kFidelity;
  if (s == "external") return RewardKind::kExternal;
  fail("E_CONFIG", "unknown reward kind '" + s + "'");
}

std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::kTargetLoglik: return "target_loglik";
    case RewardKind::kRefSimilarity: return "ref_similarity";
    case RewardKind::kFidelity: return "fidelity";
    case RewardKind::kExternal: return "external";
  }
  return "?";
}

Projection make_projection(std::size_t feature_dim, std::size_t data_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, /*stream=*/0x9e));
  Projection p;
  p.matrix = rng.normal_tensor({feature_dim, data_dim});
  return p;
}

double reward_target_loglik(const TaskSpec& task, const Tensor& x) {
  return clean_log_density(task, x);
}

double reward_reference_similarity(const Tensor& x, const Tensor& x1, const Projection& proj) {
  require(x.same_shape(x1), "E_SHAPE", "similarity reward: shape mismatch");
  const std::size_t fdim = proj.matrix.rows();
  require(proj.matrix.cols() == x.size(), "E_SHAPE", "projection dimension mismatch");

  auto project = [&](const Tensor& v, std::size_t f) {
    double acc = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) acc += proj.matrix.at2(f, j) * v.data[j];
    return acc;
  };

  double dot = 0.0, nx = 0.0, nr = 0.0;
  for (std::size_t f = 0; f < fdim; ++f) {
    const double a = project(x, f);
    const double b = project(x1, f);
    dot += a * b;
    nx += a * a;
    nr += b * b;
  }
  require(nx > 1e-24 && nr > 1e-24, "E_REWARD", "similarity reward: zero-norm features");
  return dot / (std::sqrt(nx) * std::sqrt(nr));
}

double reward_fidelity(const Tensor& x, const Tensor& x1) {
  require(x.same_shape(x1), "E_SHAPE", "fidelity reward: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.data[i] - x1.data[i];
    acc += d * d;
  }
  return -acc / static_cast<double>(x.size());
}

double estimate_std(const std::string& reward_name, const std::vector<double>& scores) {
  require(scores.size() >= 2, "E_REWARD",
          "estimate_std needs at least 2 scores for '" + reward_name + "'");
  const double s = population_std(scores);
  if (s < 1e-8) {
    std::cerr << "warning: reward '" << reward_name
              << "' has (near-)constant calibration scores; flooring std at 1e-8\n";
    return 1e-8;
  }
  return s;
}

double combine_multi(const std::vector<RewardSpec>& specs, const std::vector<double>& raw) {
  require(raw.size() == specs.size(), "E_REWARD", "combine_multi: missing component score");
  double acc = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    require(specs[i].std_estimated && specs[i].norm_std > 0.0, "E_REWARD",
            "combine_multi: reward '" + specs[i].name + "' has no estimated std");
    acc += specs[i].weight * raw[i] / specs[i].norm_std;
  }
  return acc;
}

namespace {

std::string unique_scratch_name(const std::string& dir, const std::string& tag) {
  static std::atomic<std::uint64_t> counter{0};
  return dir + "/scorer_" + std::to_string(::getpid()) + "_" + tag + "_" +
         std::to_string(counter.fetch_add(1));
}

// Run argv with a hard timeout; returns exit status.
int run_with_timeout(const std::vector<std::string>& argv, double timeout_sec) {
  std::vector<char*> cargv;
  cargv.reserve(argv.size() + 1);
  for (const std::string& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);

  const pid_t pid = ::fork();
  require(pid >= 0, "E_SCORER", "failed to fork external scorer");
  if (pid == 0) {
    ::execvp(cargv[0], cargv.data());
    std::_Exit(127);  // exec failed
  }

  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_sec);
  int status = 0;
  for (;;) {
    const pid_t done = ::waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    require(done >= 0, "E_SCORER", "waitpid failed for external scorer");
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      fail("E_SCORER", "external scorer timed out after " + std::to_string(timeout_sec) + "s");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  if (WIFEXITED(status) && WEXITSTATUS(status) == 127)
    fail("E_SCORER", "failed to launch external scorer '" + argv[0] + "'");
  return status;
}

}  // namespace

std::vector<double> external_score(const ExternalScorer& scorer, const std::vector<Tensor>& samples,
                                   const std::string& scratch_dir) {
  require(!scorer.command.empty(), "E_SCORER", "external scorer has no command");
  std::filesystem::create_directories(scratch_dir);
  const std::string request_path = unique_scratch_name(scratch_dir, "req") + ".tsv";
  const std::string response_path = unique_scratch_name(scratch_dir, "resp") + ".tsv";

  {
    std::ofstream req(request_path, std::ios::trunc);
    require(req.good(), "E_IO", "cannot write scorer request file: " + request_path);
    char buf[64];
    for (std::size_t i = 0; i < samples.size(); ++i) {
      req << i << '\t' << samples[i].size() << '\t';
      for (std::size_t j = 0; j < samples[i].size(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", samples[i].data[j]);
        req << (j == 0 ? "" : ",") << buf;
      }
      req << '\n';
    }
  }

  std::vector<std::string> argv = scorer.command;
  argv.push_back(request_path);
  argv.push_back(response_path);
  const int status = run_with_timeout(argv, scorer.timeout_sec);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    fail("E_SCORER", "external scorer exited with nonzero status");

  std::ifstream resp(response_path);
  require(resp.good(), "E_SCORER", "external scorer produced no response file");
  std::map<std::size_t, double> by_id;
  std::string line;
  while (std::getline(resp, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::size_t id = 0;
    double score = 0.0;
    char tab = 0;
    ss >> id >> std::noskipws >> tab >> std::skipws >> score;
    require(!ss.fail() && tab == '\t', "E_SCORER", "malformed scorer response line: " + line);
    by_id[id] = score;
  }
  std::filesystem::remove(request_path);
  std::filesystem::remove(response_path);

  std::vector<double> scores;
  scores.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = by_id.find(i);
    require(it != by_id.end(), "E_SCORER",
            "external scorer response missing id " + std::to_string(i));
    scores.push_back(it->second);
  }
  require(by_id.size() == samples.size(), "E_SCORER",
          "external scorer returned scores for unknown ids");
  return scores;
}

RewardBank::RewardBank(TaskSpec task, std::vector<RewardSpec> specs, std::uint64_t projection_seed,
                       std::string scratch_dir)
    : task_(std::move(task)),
      specs_(std::move(specs)),
      projection_(make_projection(8, task_.data_dim(), projection_seed)),
      scratch_dir_(std::move(scratch_dir)) {
  require(!specs_.empty(), "E_CONFIG", "reward bank needs at least one reward");
}

std::vector<std::vector<double>> RewardBank::raw_scores(const std::vector<ScoreRequest>& batch) const {
  std::vector<std::vector<double>> raw(batch.size(), std::vector<double>(specs_.size(), 0.0));
  for (std::size_t s = 0; s < specs_.size(); ++s) {
    const RewardSpec& spec = specs_[s];
    switch (spec.kind) {
      case RewardKind::kTargetLoglik:
        for (std::size_t i = 0; i < batch.size(); ++i)
          raw[i][s] = reward_target_loglik(task_, batch[i].x);
        break;
      case RewardKind::kRefSimilarity:
        for (std::size_t i = 0; i < batch.size(); ++i)
          raw[i][s] = reward_reference_similarity(batch[i].x, batch[i].x1, projection_);
        break;
      case RewardKind::kFidelity:
        for (std::size_t i = 0; i < batch.size(); ++i)
          raw[i][s] = reward_fidelity(batch[i].x, batch[i].x1);
        break;
      case RewardKind::kExternal: {
        std::vector<Tensor> samples;
        samples.reserve(batch.size());
        for (const ScoreRequest& r : batch) samples.push_back(r.x);
        ExternalScorer scorer{spec.command, spec.timeout_sec};
        const std::vector<double> scores = external_score(scorer, samples, scratch_dir_);
        for (std::size_t i = 0; i < batch.size(); ++i) raw[i][s] = scores[i];
        break;
      }
    }
  }
  return raw;
}

ScoredBatch RewardBank::score(const std::vector<ScoreRequest>& batch) const {
  ScoredBatch out;
  out.raw = raw_scores(batch);
  out.combined.reserve(batch.size());
  for (const std::vector<double>& r : out.raw) out.combined.push_back(combine_multi(specs_, r));
  return out;
}

void RewardBank::calibrate(const std::vector<ScoreRequest>& batch) {
  const std::vector<std::vector<double>> raw = raw_scores(batch);
  for (std::size_t s = 0; s < specs_.size(); ++s) {
    std::vector<double> scores;
    scores.reserve(raw.size());
    for (const std::vector<double>& r : raw) scores.push_back(r[s]);
    specs_[s].norm_std = estimate_std(specs_[s].name, scores);
    specs_[s].std_estimated = true;
  }
}

bool RewardBank::calibrated() const {
  for (const RewardSpec& s : specs_)
    if (!s.std_estimated) return false;
  return true;
}

}  // namespace flowlab
