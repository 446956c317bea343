#include <cmath>

#include "doctest.h"

#include "flowlab/errors.hpp"
#include "flowlab/flow.hpp"
#include "flowlab/stats.hpp"
#include "test_util.hpp"

using namespace flowlab;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.data_dim = 2;
  cfg.hidden_dim = 8;
  cfg.num_layers = 1;
  cfg.time_embed_dim = 2;
  cfg.cond_dropout_prob = 0.0;
  return cfg;
}

// All weights zero except the output bias: forward(x, c, t) == bias exactly.
ParamSet constant_model(const ModelConfig& cfg, const Tensor& output) {
  ParamSet params = init_params(cfg, 1);
  for (std::size_t e = 0; e < params.count(); ++e) params.entry(e).value.fill(0.0);
  params.find("out.b") = output;
  return params;
}

}  // namespace

TEST_CASE("interpolant satisfies its construction identities") {
  Rng rng(3);
  TrainPair pair;
  pair.x1 = Tensor::vector({2.0, -1.0});
  pair.c = pair.x1;
  for (int i = 0; i < 100; ++i) {
    const InterpolantSample s = sample_interpolant(pair, rng);
    CHECK(s.t >= 0.0);
    CHECK(s.t <= 1.0);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(s.x_t.data[j] == (1.0 - s.t) * s.x0.data[j] + s.t * pair.x1.data[j]);
      CHECK(s.v_target.data[j] == pair.x1.data[j] - s.x0.data[j]);
    }
  }

  // boundary arithmetic: x0 = 0, x1 = 2, t = 0.5 gives x_t = 1, v = 2
  CHECK((1.0 - 0.5) * 0.0 + 0.5 * 2.0 == 1.0);
}

TEST_CASE("interpolant marginal variance matches (1-t)^2 + t^2 sigma1^2") {
  const double mu1 = 2.0, sigma1 = 0.5;
  Rng rng(5);
  for (double t : {0.25, 0.5, 0.75}) {
    std::vector<double> xs;
    xs.reserve(20000);
    for (int i = 0; i < 20000; ++i) {
      const double x1 = mu1 + sigma1 * rng.normal();
      const double x0 = rng.normal();
      xs.push_back((1.0 - t) * x0 + t * x1);
    }
    const double want = (1.0 - t) * (1.0 - t) + t * t * sigma1 * sigma1;
    const double got = population_std(xs) * population_std(xs);
    CHECK(std::abs(got - want) / want < 0.05);
  }
}

TEST_CASE("fm_loss analytic cases") {
  const ModelConfig cfg = tiny_config();

  FmBatch batch;
  InterpolantSample s;
  s.t = 0.5;
  s.x0 = Tensor::vector({0.0, 0.0});
  s.x_t = Tensor::vector({0.3, 0.4});
  s.v_target = Tensor::vector({3.0, 4.0});
  batch.samples.push_back(s);
  batch.conditions.push_back(Tensor::vector({0.0, 0.0}));

  // model that always predicts zero: loss is the summed square 3^2 + 4^2
  ParamSet zero_model = constant_model(cfg, Tensor::vector({0.0, 0.0}));
  {
    Tape tape;
    BoundModel m = bind_model(tape, cfg, zero_model);
    CHECK(tape.item(fm_loss(tape, m, batch)) == doctest::Approx(25.0).epsilon(1e-12));
  }

  // model that always predicts exactly the target: loss 0
  ParamSet exact_model = constant_model(cfg, s.v_target);
  {
    Tape tape;
    BoundModel m = bind_model(tape, cfg, exact_model);
    CHECK(tape.item(fm_loss(tape, m, batch)) == 0.0);
  }

  Tape tape;
  BoundModel m = bind_model(tape, cfg, zero_model);
  CHECK_THROWS_AS(fm_loss(tape, m, FmBatch{}), Error);
}

TEST_CASE("fm_loss matches an independent scalar-loop computation") {
  const ModelConfig cfg = tiny_config();
  ParamSet params = init_params(cfg, 19);
  Rng rng(23);

  FmBatch batch;
  for (int i = 0; i < 6; ++i) {
    TrainPair pair;
    pair.x1 = rng.normal_tensor({cfg.data_dim});
    pair.c = rng.normal_tensor({cfg.data_dim});
    batch.samples.push_back(sample_interpolant(pair, rng));
    batch.conditions.push_back(pair.c);
  }

  double want = 0.0;
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    const InterpolantSample& s = batch.samples[i];
    const Tensor pred = forward_value(cfg, params, s.x_t, batch.conditions[i], s.t);
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const double d = pred.data[j] - s.v_target.data[j];
      want += d * d;
    }
  }
  want /= static_cast<double>(batch.samples.size());

  Tape tape;
  BoundModel m = bind_model(tape, cfg, params);
  CHECK(tape.item(fm_loss(tape, m, batch)) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("fm_loss is invariant under batch permutation") {
  const ModelConfig cfg = tiny_config();
  ParamSet params = init_params(cfg, 29);
  Rng rng(31);

  FmBatch batch;
  for (int i = 0; i < 5; ++i) {
    TrainPair pair;
    pair.x1 = rng.normal_tensor({cfg.data_dim});
    pair.c = rng.normal_tensor({cfg.data_dim});
    batch.samples.push_back(sample_interpolant(pair, rng));
    batch.conditions.push_back(pair.c);
  }
  FmBatch reversed;
  for (std::size_t i = batch.samples.size(); i > 0; --i) {
    reversed.samples.push_back(batch.samples[i - 1]);
    reversed.conditions.push_back(batch.conditions[i - 1]);
  }

  Tape t1, t2;
  BoundModel m1 = bind_model(t1, cfg, params);
  BoundModel m2 = bind_model(t2, cfg, params);
  CHECK(t1.item(fm_loss(t1, m1, batch)) ==
        doctest::Approx(t2.item(fm_loss(t2, m2, reversed))).epsilon(1e-12));
}

TEST_CASE("fm_loss gradient matches finite differences") {
  const ModelConfig cfg = tiny_config();
  ParamSet params = init_params(cfg, 37);
  Rng rng(41);

  FmBatch batch;
  for (int i = 0; i < 3; ++i) {
    TrainPair pair;
    pair.x1 = rng.normal_tensor({cfg.data_dim});
    pair.c = rng.normal_tensor({cfg.data_dim});
    batch.samples.push_back(sample_interpolant(pair, rng));
    batch.conditions.push_back(pair.c);
  }

  auto value = [&] {
    Tape tape;
    BoundModel m = bind_model_frozen(tape, cfg, params);
    return tape.item(fm_loss(tape, m, batch));
  };
  params.zero_grad();
  {
    Tape tape;
    BoundModel m = bind_model(tape, cfg, params);
    tape.backward(fm_loss(tape, m, batch));
  }
  for (std::size_t e = 0; e < params.count(); ++e) {
    ParamSet::Entry& entry = params.entry(e);
    for (std::size_t i = 0; i < entry.value.size(); ++i)
      CHECK(testutil::grad_close(entry.grad.data[i],
                                 testutil::central_fd(value, entry.value.data[i])));
  }
}

TEST_CASE("pretrain_step behavior") {
  const ModelConfig cfg = tiny_config();
  Rng rng(43);

  auto make_batch = [&](Rng& r) {
    FmBatch batch;
    for (int i = 0; i < 16; ++i) {
      TrainPair pair;
      pair.x1 = Tensor::vector({2.0 + 0.5 * r.normal(), 0.0});
      pair.c = pair.x1;
      batch.samples.push_back(sample_interpolant(pair, r));
      batch.conditions.push_back(pair.c);
    }
    return batch;
  };

  // zero learning rate leaves parameters unchanged
  {
    ParamSet params = init_params(cfg, 47);
    const ParamSet before = params.clone();
    Adam opt(params);
    pretrain_step(params, cfg, make_batch(rng), opt, 0.0);
    CHECK(params.same_values(before));
  }

  // loss decreases over 200 steps on a fixed 1-D style task
  {
    ParamSet params = init_params(cfg, 53);
    Adam opt(params);
    Rng data_rng(59);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
      last = pretrain_step(params, cfg, make_batch(data_rng), opt, 3e-3);
      if (step == 0) first = last;
    }
    CHECK(last < first);
  }

  // identical seeds give identical loss traces
  {
    auto run = [&] {
      ParamSet params = init_params(cfg, 61);
      Adam opt(params);
      Rng data_rng(67);
      std::vector<double> losses;
      for (int step = 0; step < 20; ++step)
        losses.push_back(pretrain_step(params, cfg, make_batch(data_rng), opt, 3e-3));
      return losses;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("analytic_gaussian_velocity symmetry and errors") {
  for (double t : {0.1, 0.5, 0.9})
    CHECK(analytic_gaussian_velocity(0.0, t, 0.0, 1.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(analytic_gaussian_velocity(0.0, 0.0, 0.0, 1.0), Error);
  CHECK_THROWS_AS(analytic_gaussian_velocity(0.0, 1.0, 0.0, 1.0), Error);
}

TEST_CASE("analytic_gaussian_velocity matches a Monte-Carlo conditional mean") {
  const double mu1 = 2.0, sigma1 = 0.5, t = 0.3, x = 1.0;
  Rng rng(71);

  // conditional mean of v = x1 - x0 given x_t in a narrow window around x
  const double window = 0.01;
  double sum = 0.0, sum_sq = 0.0;
  std::size_t hits = 0;
  for (int i = 0; i < 1000000; ++i) {
    const double x0 = rng.normal();
    const double x1 = mu1 + sigma1 * rng.normal();
    const double xt = (1.0 - t) * x0 + t * x1;
    if (std::abs(xt - x) < window) {
      const double v = x1 - x0;
      sum += v;
      sum_sq += v * v;
      ++hits;
    }
  }
  REQUIRE(hits > 1000);
  const double mc_mean = sum / static_cast<double>(hits);
  const double mc_var = sum_sq / static_cast<double>(hits) - mc_mean * mc_mean;
  const double se = std::sqrt(mc_var / static_cast<double>(hits));

  const double analytic = analytic_gaussian_velocity(x, t, mu1, sigma1);
  CHECK(std::abs(analytic - mc_mean) < 3.0 * se + 1e-3);
}
