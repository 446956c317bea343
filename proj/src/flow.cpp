#include "flowlab/flow.hpp"

#include <cmath>

#include "flowlab/errors.hpp"

namespace flowlab {

InterpolantSample sample_interpolant(const TrainPair& pair, Rng& rng) {
  InterpolantSample s;
  s.t = rng.uniform();
  s.x0 = rng.normal_tensor(pair.x1.shape);
  s.x_t = Tensor(pair.x1.shape);
  s.v_target = Tensor(pair.x1.shape);
  for (std::size_t i = 0; i < pair.x1.size(); ++i) {
    s.x_t.data[i] = (1.0 - s.t) * s.x0.data[i] + s.t * pair.x1.data[i];
    s.v_target.data[i] = pair.x1.data[i] - s.x0.data[i];
  }
  return s;
}

Value fm_loss(Tape& tape, const BoundModel& model, const FmBatch& batch) {
  require(!batch.samples.empty(), "E_ARG", "fm_loss: empty batch");
  require(batch.samples.size() == batch.conditions.size(), "E_ARG",
          "fm_loss: sample/condition count mismatch");

  const std::size_t n = batch.samples.size();
  const std::size_t d = batch.samples[0].x_t.size();
  Tensor x_rows({n, d}), c_rows({n, d}), v_rows({n, d});
  std::vector<double> ts(n);
  for (std::size_t i = 0; i < n; ++i) {
    const InterpolantSample& s = batch.samples[i];
    require(s.x_t.size() == d && batch.conditions[i].size() == d, "E_SHAPE",
            "fm_loss: inconsistent sample dimensions");
    ts[i] = s.t;
    for (std::size_t j = 0; j < d; ++j) {
      x_rows.at2(i, j) = s.x_t.data[j];
      c_rows.at2(i, j) = batch.conditions[i].data[j];
      v_rows.at2(i, j) = s.v_target.data[j];
    }
  }

  Value pred = model_forward_rows(tape, model, tape.constant(std::move(x_rows)),
                                  tape.constant(std::move(c_rows)), ts);
  Value err = tape.sum(tape.square(tape.sub(pred, tape.constant(std::move(v_rows)))));
  return tape.scale(err, 1.0 / static_cast<double>(n));
}

double pretrain_step(ParamSet& params, const ModelConfig& cfg, const FmBatch& batch, Adam& opt,
                     double lr) {
  require(lr >= 0.0, "E_ARG", "pretrain_step: learning rate must not be negative");
  params.zero_grad();
  Tape tape;
  BoundModel model = bind_model(tape, cfg, params);
  Value loss = fm_loss(tape, model, batch);
  const double loss_value = tape.item(loss);
  require(std::isfinite(loss_value), "E_NONFINITE", "pretrain_step: non-finite loss");
  tape.backward(loss);
  opt.step(params, lr);
  return loss_value;
}

double analytic_gaussian_velocity(double x, double t, double mu1, double sigma1) {
  require(t > 0.0 && t < 1.0, "E_ARG", "analytic_gaussian_velocity: t must lie in (0, 1)");
  require(sigma1 > 0.0, "E_ARG", "analytic_gaussian_velocity: sigma1 must be positive");
  const double s2 = sigma1 * sigma1;
  const double var_xt = (1.0 - t) * (1.0 - t) + t * t * s2;
  return mu1 + (t * s2 - (1.0 - t)) / var_xt * (x - t * mu1);
}

}  // namespace flowlab
