#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "flowlab/checkpoint.hpp"
#include "flowlab/errors.hpp"
#include "flowlab/model.hpp"
#include "test_util.hpp"

using namespace flowlab;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.data_dim = 2;
  cfg.hidden_dim = 8;
  cfg.num_layers = 2;
  cfg.time_embed_dim = 3;
  cfg.cond_dropout_prob = 0.1;
  return cfg;
}

}  // namespace

TEST_CASE("init_params is deterministic and seed-sensitive") {
  const ModelConfig cfg = small_config();
  const ParamSet a = init_params(cfg, 42);
  const ParamSet b = init_params(cfg, 42);
  const ParamSet c = init_params(cfg, 43);
  CHECK(a.same_values(b));
  CHECK_FALSE(a.same_values(c));
  CHECK(a.scalar_count() > 0);
}

TEST_CASE("initial velocity is near zero") {
  const ModelConfig cfg = small_config();
  const ParamSet params = init_params(cfg, 7);
  Rng rng(99);
  for (int i = 0; i < 16; ++i) {
    const Tensor x = rng.normal_tensor({cfg.data_dim});
    const Tensor c = rng.normal_tensor({cfg.data_dim});
    const Tensor v = forward_value(cfg, params, x, c, rng.uniform());
    double norm = 0.0;
    for (double e : v.data) norm += e * e;
    CHECK(std::sqrt(norm) <= 0.1 * std::sqrt(static_cast<double>(cfg.data_dim)));
  }
}

TEST_CASE("forward shape contract and determinism") {
  const ModelConfig cfg = small_config();
  const ParamSet params = init_params(cfg, 3);
  Rng rng(5);
  const Tensor x = rng.normal_tensor({cfg.data_dim});
  const Tensor c = rng.normal_tensor({cfg.data_dim});

  const Tensor v1 = forward_value(cfg, params, x, c, 0.3);
  const Tensor v2 = forward_value(cfg, params, x, c, 0.3);
  CHECK(v1.shape == x.shape);
  CHECK(v1 == v2);

  Tape tape;
  BoundModel model = bind_model_frozen(tape, cfg, params);
  CHECK_THROWS_AS(model_forward(tape, model, tape.constant(x), tape.constant(c), 1.5), Error);
  CHECK_THROWS_AS(model_forward(tape, model, tape.constant(x), tape.constant(c), -0.1), Error);
}

TEST_CASE("batched forward rows match single-sample forwards bit-for-bit") {
  const ModelConfig cfg = small_config();
  const ParamSet params = init_params(cfg, 11);
  Rng rng(13);
  const std::size_t n = 5;
  Tensor x_rows({n, cfg.data_dim}), c_rows({n, cfg.data_dim});
  std::vector<double> ts;
  for (std::size_t i = 0; i < n; ++i) {
    ts.push_back(rng.uniform());
    for (std::size_t j = 0; j < cfg.data_dim; ++j) {
      x_rows.at2(i, j) = rng.normal();
      c_rows.at2(i, j) = rng.normal();
    }
  }

  Tape tape;
  BoundModel model = bind_model_frozen(tape, cfg, params);
  Value rows = model_forward_rows(tape, model, tape.constant(x_rows), tape.constant(c_rows), ts);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x({cfg.data_dim}), c({cfg.data_dim});
    for (std::size_t j = 0; j < cfg.data_dim; ++j) {
      x.data[j] = x_rows.at2(i, j);
      c.data[j] = c_rows.at2(i, j);
    }
    const Tensor single = forward_value(cfg, params, x, c, ts[i]);
    for (std::size_t j = 0; j < cfg.data_dim; ++j)
      CHECK(tape.value(rows).at2(i, j) == single.data[j]);
  }
}

TEST_CASE("forward gradient matches finite differences") {
  const ModelConfig cfg = small_config();
  ParamSet params = init_params(cfg, 17);
  Rng rng(19);
  const Tensor x = rng.normal_tensor({cfg.data_dim});
  const Tensor c = rng.normal_tensor({cfg.data_dim});
  const double t = 0.4;

  auto value = [&] {
    Tape tape;
    BoundModel m = bind_model_frozen(tape, cfg, params);
    return tape.item(
        tape.sum(tape.square(model_forward(tape, m, tape.constant(x), tape.constant(c), t))));
  };
  params.zero_grad();
  {
    Tape tape;
    BoundModel m = bind_model(tape, cfg, params);
    tape.backward(
        tape.sum(tape.square(model_forward(tape, m, tape.constant(x), tape.constant(c), t))));
  }
  for (std::size_t e = 0; e < params.count(); ++e) {
    ParamSet::Entry& entry = params.entry(e);
    for (std::size_t i = 0; i < entry.value.size(); ++i)
      CHECK(testutil::grad_close(entry.grad.data[i],
                                 testutil::central_fd(value, entry.value.data[i])));
  }
}

TEST_CASE("guided_forward identities") {
  const ModelConfig cfg = small_config();
  const ParamSet params = init_params(cfg, 23);
  Rng rng(29);
  const Tensor x = rng.normal_tensor({cfg.data_dim});
  const Tensor c = rng.normal_tensor({cfg.data_dim});
  const Tensor null_c(c.shape, 0.0);
  const double t = 0.6;

  // w = 1: exactly the conditional forward
  CHECK(forward_value(cfg, params, x, c, t, 1.0) == forward_value(cfg, params, x, c, t));
  // w = 0: exactly the null-condition forward
  CHECK(forward_value(cfg, params, x, c, t, 0.0) == forward_value(cfg, params, x, null_c, t));

  // w = 2: equals 2*v_cond - v_uncond from two explicit calls
  const Tensor v_cond = forward_value(cfg, params, x, c, t);
  const Tensor v_uncond = forward_value(cfg, params, x, null_c, t);
  const Tensor guided = forward_value(cfg, params, x, c, t, 2.0);
  for (std::size_t i = 0; i < guided.size(); ++i)
    CHECK(guided.data[i] ==
          doctest::Approx(2.0 * v_cond.data[i] - v_uncond.data[i]).epsilon(1e-12));
}

TEST_CASE("drop_condition") {
  Rng rng(31);
  const Tensor c = Tensor::vector({1.0, -2.0});
  CHECK(drop_condition(c, 0.0, rng) == c);
  CHECK(drop_condition(c, 1.0, rng) == Tensor(c.shape, 0.0));

  int null_count = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i)
    if (drop_condition(c, 0.1, rng).data[0] == 0.0) ++null_count;
  const double frac = static_cast<double>(null_count) / draws;
  CHECK(frac >= 0.08);
  CHECK(frac <= 0.12);
}

TEST_CASE("snapshot independence") {
  const ModelConfig cfg = small_config();
  ParamSet params = init_params(cfg, 37);
  const ParamSet snapshot = params.clone();
  const ParamSet witness = params.clone();

  params.entry(0).value.data[0] += 1.0;
  params.set_version(params.version() + 1);
  CHECK(snapshot.same_values(witness));
  CHECK_FALSE(params.same_values(snapshot));
  CHECK(snapshot.version() != params.version());
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  const ModelConfig cfg = small_config();
  ParamSet params = init_params(cfg, 41);
  params.set_version(17);

  const std::string dir = std::filesystem::temp_directory_path() / "flowlab_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/model.ckpt";

  Checkpoint ckpt{cfg, params.clone(), {{"stage", "test"}, {"update_step", "17"}}};
  save_checkpoint(path, ckpt);
  const Checkpoint loaded = load_checkpoint(path);

  CHECK(loaded.config == cfg);
  CHECK(loaded.params.same_values(params));
  CHECK(loaded.params.version() == 17);
  CHECK(loaded.metadata.at("stage") == "test");
  CHECK(std::filesystem::exists(path + ".manifest"));

  // a second save of the loaded checkpoint produces identical bytes
  const std::string path2 = dir + "/model2.ckpt";
  save_checkpoint(path2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::stringstream b1, b2;
  b1 << f1.rdbuf();
  b2 << f2.rdbuf();
  CHECK(b1.str() == b2.str());

  CHECK_THROWS_AS(load_checkpoint(dir + "/missing.ckpt"), Error);
  std::ofstream(dir + "/garbage.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir + "/garbage.ckpt"), Error);
}
