#include "flowlab/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "flowlab/errors.hpp"
#include "flowlab/stats.hpp"

namespace flowlab {

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "gauss1d") return TaskKind::kGauss1d;
  if (s == "circle2d") return TaskKind::kCircle2d;
  if (s == "mixture") return TaskKind::kMixture;
  fail("E_CONFIG", "unknown task kind '" + s + "'");
}

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kGauss1d: return "gauss1d";
    case TaskKind::kCircle2d: return "circle2d";
    case TaskKind::kMixture: return "mixture";
  }
  return "?";
}

void TaskSpec::validate() const {
  require(corruption_std >= 0.0, "E_CONFIG", "corruption_std must be >= 0");
  switch (kind) {
    case TaskKind::kGauss1d:
      require(std1 > 0.0, "E_CONFIG", "gauss1d std must be positive");
      break;
    case TaskKind::kCircle2d:
      require(radius > 0.0, "E_CONFIG", "circle radius must be positive");
      break;
    case TaskKind::kMixture: {
      require(!components.empty(), "E_CONFIG", "mixture needs at least one component");
      double wsum = 0.0;
      for (const MixtureComponent& c : components) {
        require(c.weight > 0.0 && c.std > 0.0, "E_CONFIG",
                "mixture weights and stds must be positive");
        wsum += c.weight;
      }
      require(std::abs(wsum - 1.0) < 1e-9, "E_CONFIG", "mixture weights must sum to 1");
      break;
    }
  }
}

TrainPair sample_pair(const TaskSpec& spec, Rng& rng) {
  TrainPair pair;
  switch (spec.kind) {
    case TaskKind::kGauss1d:
      pair.x1 = Tensor::vector({spec.mean1 + spec.std1 * rng.normal()});
      break;
    case TaskKind::kCircle2d: {
      const double phi = 2.0 * M_PI * rng.uniform();
      pair.x1 = Tensor::vector({spec.radius * std::cos(phi), spec.radius * std::sin(phi)});
      break;
    }
    case TaskKind::kMixture: {
      double u = rng.uniform();
      std::size_t pick = spec.components.size() - 1;
      for (std::size_t i = 0; i < spec.components.size(); ++i) {
        if (u < spec.components[i].weight) {
          pick = i;
          break;
        }
        u -= spec.components[i].weight;
      }
      const MixtureComponent& comp = spec.components[pick];
      pair.x1 = Tensor::vector({comp.mean + comp.std * rng.normal()});
      break;
    }
  }
  pair.c = Tensor(pair.x1.shape);
  for (std::size_t i = 0; i < pair.x1.size(); ++i)
    pair.c.data[i] = pair.x1.data[i] + spec.corruption_std * rng.normal();
  return pair;
}

double clean_log_density(const TaskSpec& spec, const Tensor& x) {
  switch (spec.kind) {
    case TaskKind::kGauss1d:
      require(x.size() == 1, "E_SHAPE", "gauss1d expects 1-D samples");
      return normal_log_pdf(x.data[0], spec.mean1, spec.std1);
    case TaskKind::kCircle2d: {
      require(x.size() == 2, "E_SHAPE", "circle2d expects 2-D samples");
      const double r = std::sqrt(x.data[0] * x.data[0] + x.data[1] * x.data[1]);
      const double d = r - spec.radius;
      return -d * d;
    }
    case TaskKind::kMixture: {
      require(x.size() == 1, "E_SHAPE", "mixture expects 1-D samples");
      // log-sum-exp over components
      double max_term = -1e300;
      std::vector<double> terms;
      terms.reserve(spec.components.size());
      for (const MixtureComponent& c : spec.components) {
        const double term = std::log(c.weight) + normal_log_pdf(x.data[0], c.mean, c.std);
        terms.push_back(term);
        max_term = std::max(max_term, term);
      }
      double acc = 0.0;
      for (double t : terms) acc += std::exp(t - max_term);
      return max_term + std::log(acc);
    }
  }
  fail("E_STATE", "unreachable task kind");
}

GaussPosterior gauss1d_posterior(const TaskSpec& spec, double c) {
  require(spec.kind == TaskKind::kGauss1d, "E_ARG", "posterior only defined for gauss1d");
  require(spec.corruption_std > 0.0, "E_ARG", "posterior needs corruption_std > 0");
  const double prec = 1.0 / (spec.std1 * spec.std1) + 1.0 / (spec.corruption_std * spec.corruption_std);
  GaussPosterior p;
  p.mean = (spec.mean1 / (spec.std1 * spec.std1) + c / (spec.corruption_std * spec.corruption_std)) / prec;
  p.std = std::sqrt(1.0 / prec);
  return p;
}

}  // namespace flowlab
