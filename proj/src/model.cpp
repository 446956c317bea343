#include "flowlab/model.hpp"

#include <cmath>

#include "flowlab/errors.hpp"

namespace flowlab {

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "silu") return Activation::kSilu;
  fail("E_CONFIG", "unknown activation '" + s + "' (expected tanh or silu)");
}

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "silu"; }

void ModelConfig::validate() const {
  require(data_dim >= 1 && hidden_dim >= 1 && num_layers >= 1 && time_embed_dim >= 1, "E_CONFIG",
          "model dimensions must be >= 1");
  require(cond_dropout_prob >= 0.0 && cond_dropout_prob <= 1.0, "E_CONFIG",
          "cond_dropout_prob must lie in [0, 1]");
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.data_dim == b.data_dim && a.hidden_dim == b.hidden_dim &&
         a.num_layers == b.num_layers && a.time_embed_dim == b.time_embed_dim &&
         a.cond_dropout_prob == b.cond_dropout_prob && a.activation == b.activation;
}

void ParamSet::add(std::string name, Tensor value) {
  Entry e;
  e.name = std::move(name);
  e.grad = Tensor::zeros_like(value);
  e.value = std::move(value);
  entries_.push_back(std::move(e));
}

Tensor& ParamSet::find(const std::string& name) {
  for (Entry& e : entries_)
    if (e.name == name) return e.value;
  fail("E_STATE", "no parameter named '" + name + "'");
}

const Tensor& ParamSet::find(const std::string& name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return e.value;
  fail("E_STATE", "no parameter named '" + name + "'");
}

void ParamSet::zero_grad() {
  for (Entry& e : entries_) e.grad.fill(0.0);
}

ParamSet ParamSet::clone() const {
  ParamSet copy;
  copy.entries_ = entries_;
  copy.version_ = version_;
  return copy;
}

std::vector<Value> ParamSet::bind(Tape& tape, bool trainable) {
  std::vector<Value> out;
  out.reserve(entries_.size());
  for (Entry& e : entries_) out.push_back(tape.leaf(e.value, trainable ? &e.grad : nullptr));
  return out;
}

std::vector<Value> ParamSet::bind_frozen(Tape& tape) const {
  std::vector<Value> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(tape.leaf(e.value, nullptr));
  return out;
}

bool ParamSet::same_values(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].value != other.entries_[i].value) return false;
  }
  return true;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.value.size();
  return n;
}

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, /*stream=*/0x1));
  ParamSet params;

  auto normal_matrix = [&](std::size_t rows, std::size_t cols, double std) {
    Tensor w({rows, cols});
    for (double& v : w.data) v = std * rng.normal();
    return w;
  };

  std::size_t in_dim = cfg.input_dim();
  for (std::size_t layer = 0; layer < cfg.num_layers; ++layer) {
    const std::string base = "layer" + std::to_string(layer);
    params.add(base + ".w", normal_matrix(in_dim, cfg.hidden_dim, 1.0 / std::sqrt(static_cast<double>(in_dim))));
    params.add(base + ".b", Tensor({cfg.hidden_dim}));
    in_dim = cfg.hidden_dim;
  }
  // Small output scale keeps the initial velocity near zero.
  params.add("out.w", normal_matrix(in_dim, cfg.data_dim, 0.01 / std::sqrt(static_cast<double>(in_dim))));
  params.add("out.b", Tensor({cfg.data_dim}));
  return params;
}

Tensor time_embedding(const ModelConfig& cfg, double t) {
  Tensor e({2 * cfg.time_embed_dim});
  double freq = M_PI;
  for (std::size_t j = 0; j < cfg.time_embed_dim; ++j) {
    e.data[2 * j] = std::sin(freq * t);
    e.data[2 * j + 1] = std::cos(freq * t);
    freq *= 2.0;
  }
  return e;
}

BoundModel bind_model(Tape& tape, const ModelConfig& cfg, ParamSet& params, bool trainable) {
  BoundModel m;
  m.cfg = &cfg;
  m.params = params.bind(tape, trainable);
  return m;
}

BoundModel bind_model_frozen(Tape& tape, const ModelConfig& cfg, const ParamSet& params) {
  BoundModel m;
  m.cfg = &cfg;
  m.params = params.bind_frozen(tape);
  return m;
}

namespace {

Value mlp_stack(Tape& tape, const BoundModel& model, Value input) {
  const ModelConfig& cfg = *model.cfg;
  Value h = input;
  for (std::size_t layer = 0; layer < cfg.num_layers; ++layer) {
    h = tape.affine(h, model.params[2 * layer], model.params[2 * layer + 1]);
    h = cfg.activation == Activation::kTanh ? tape.tanh(h) : tape.silu(h);
  }
  return tape.affine(h, model.params[2 * cfg.num_layers], model.params[2 * cfg.num_layers + 1]);
}

}  // namespace

Value model_forward(Tape& tape, const BoundModel& model, Value x, Value c, double t) {
  const ModelConfig& cfg = *model.cfg;
  require(t >= 0.0 && t <= 1.0, "E_ARG", "model_forward: t outside [0, 1]");
  const Tensor& tx = tape.value(x);
  require(tx.same_shape(tape.value(c)), "E_SHAPE", "state/condition shape mismatch");

  Tensor embed = time_embedding(cfg, t);
  Value embed_v;
  if (tx.rank() == 1) {
    require(tx.shape[0] == cfg.data_dim, "E_SHAPE", "state dimension mismatch");
    embed_v = tape.constant(embed);
  } else {
    require(tx.rank() == 2 && tx.cols() == cfg.data_dim, "E_SHAPE", "state dimension mismatch");
    Tensor rows({tx.rows(), embed.size()});
    for (std::size_t r = 0; r < tx.rows(); ++r)
      for (std::size_t j = 0; j < embed.size(); ++j) rows.at2(r, j) = embed.data[j];
    embed_v = tape.constant(std::move(rows));
  }

  return mlp_stack(tape, model, tape.concat(tape.concat(x, c), embed_v));
}

Value model_forward_rows(Tape& tape, const BoundModel& model, Value x_rows, Value c_rows,
                         const std::vector<double>& ts) {
  const ModelConfig& cfg = *model.cfg;
  const Tensor& tx = tape.value(x_rows);
  require(tx.rank() == 2 && tx.cols() == cfg.data_dim, "E_SHAPE", "state dimension mismatch");
  require(tx.same_shape(tape.value(c_rows)), "E_SHAPE", "state/condition shape mismatch");
  require(tx.rows() == ts.size(), "E_ARG", "one time per batch row required");

  Tensor rows({tx.rows(), 2 * cfg.time_embed_dim});
  for (std::size_t r = 0; r < tx.rows(); ++r) {
    require(ts[r] >= 0.0 && ts[r] <= 1.0, "E_ARG", "model_forward_rows: t outside [0, 1]");
    Tensor embed = time_embedding(cfg, ts[r]);
    for (std::size_t j = 0; j < embed.size(); ++j) rows.at2(r, j) = embed.data[j];
  }

  return mlp_stack(tape, model,
                   tape.concat(tape.concat(x_rows, c_rows), tape.constant(std::move(rows))));
}

Value guided_forward(Tape& tape, const BoundModel& model, Value x, Value c, double t,
                     double guidance_scale) {
  require(guidance_scale >= 0.0, "E_ARG", "guidance_scale must be >= 0");
  if (guidance_scale == 1.0) return model_forward(tape, model, x, c, t);

  Value null_c = tape.constant(Tensor(tape.value(c).shape, 0.0));
  Value v_uncond = model_forward(tape, model, x, null_c, t);
  if (guidance_scale == 0.0) return v_uncond;
  Value v_cond = model_forward(tape, model, x, c, t);
  return tape.axpy(guidance_scale, v_cond, 1.0 - guidance_scale, v_uncond);
}

Tensor forward_value(const ModelConfig& cfg, const ParamSet& params, const Tensor& x,
                     const Tensor& c, double t, double guidance_scale) {
  Tape tape;
  BoundModel m = bind_model_frozen(tape, cfg, params);
  Value v = guided_forward(tape, m, tape.constant(x), tape.constant(c), t, guidance_scale);
  return tape.value(v);
}

Tensor drop_condition(const Tensor& c, double prob, Rng& rng) {
  require(prob >= 0.0 && prob <= 1.0, "E_ARG", "drop probability must lie in [0, 1]");
  if (prob <= 0.0) return c;
  if (prob >= 1.0 || rng.uniform() < prob) return Tensor(c.shape, 0.0);
  return c;
}

}  // namespace flowlab
