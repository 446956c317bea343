#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowlab/rng.hpp"
#include "flowlab/tape.hpp"
#include "flowlab/tensor.hpp"

namespace flowlab {

enum class Activation { kTanh, kSilu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// Conditional velocity network v(x_t, c, t): an MLP over the concatenation of
// state, condition and a sinusoidal time embedding.
struct ModelConfig {
  std::size_t data_dim = 2;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 2;       // hidden layers
  std::size_t time_embed_dim = 4;   // frequencies; embedding length is 2x this
  double cond_dropout_prob = 0.1;
  Activation activation = Activation::kSilu;

  std::size_t input_dim() const { return 2 * data_dim + 2 * time_embed_dim; }
  void validate() const;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

// Flat, named collection of trainable tensors with parallel gradient slots.
// The version tag identifies which update step produced the weights, so
// trajectory records can name the behavior policy that generated them.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  void add(std::string name, Tensor value);

  std::size_t count() const { return entries_.size(); }
  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  Tensor& find(const std::string& name);
  const Tensor& find(const std::string& name) const;

  void zero_grad();
  ParamSet clone() const;  // independent snapshot, same version tag

  std::uint64_t version() const { return version_; }
  void set_version(std::uint64_t v) { version_ = v; }

  // One leaf per tensor, in declaration order. Trainable binding routes
  // backward() into this set's grad slots; frozen binding records no gradient.
  std::vector<Value> bind(Tape& tape, bool trainable = true);
  std::vector<Value> bind_frozen(Tape& tape) const;

  bool same_values(const ParamSet& other) const;
  std::size_t scalar_count() const;

 private:
  std::vector<Entry> entries_;
  std::uint64_t version_ = 0;
};

// Deterministic initialization; the output layer is scaled down so the
// initial velocity prediction is close to zero.
ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed);

// sin/cos features of t at geometrically spaced frequencies.
Tensor time_embedding(const ModelConfig& cfg, double t);

// Model bound onto a tape: parameter leaves in layer order.
struct BoundModel {
  const ModelConfig* cfg = nullptr;
  std::vector<Value> params;
};

BoundModel bind_model(Tape& tape, const ModelConfig& cfg, ParamSet& params, bool trainable = true);
BoundModel bind_model_frozen(Tape& tape, const ModelConfig& cfg, const ParamSet& params);

// Velocity prediction. x and c are both [d] (or [m,d] for a batch sharing t).
Value model_forward(Tape& tape, const BoundModel& model, Value x, Value c, double t);

// Batched prediction where row r uses its own time ts[r].
Value model_forward_rows(Tape& tape, const BoundModel& model, Value x_rows, Value c_rows,
                         const std::vector<double>& ts);

// Classifier-free guided velocity: v_uncond + w * (v_cond - v_uncond), with
// the all-zeros null condition. w=1 is exactly the conditional forward.
Value guided_forward(Tape& tape, const BoundModel& model, Value x, Value c, double t,
                     double guidance_scale);

// Convenience: run forward on a throwaway tape and return the value.
Tensor forward_value(const ModelConfig& cfg, const ParamSet& params, const Tensor& x,
                     const Tensor& c, double t, double guidance_scale = 1.0);

// With probability prob, replace the condition by the null (all-zeros) one.
Tensor drop_condition(const Tensor& c, double prob, Rng& rng);

}  // namespace flowlab
