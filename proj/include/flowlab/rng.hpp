#pragma once

#include <cstdint>
#include <random>

#include "flowlab/tensor.hpp"

namespace flowlab {

// Deterministic random stream. Every consumer owns its own Rng seeded from
// derive_seed(master, stream tags...) so that rollouts, tasks and evaluation
// draw from independent, replayable streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform();                    // [0, 1)
  double normal();                     // N(0, 1)
  int uniform_int(int lo, int hi);     // inclusive bounds
  Tensor normal_tensor(const std::vector<std::size_t>& shape);

 private:
  std::mt19937_64 gen_;
};

// splitmix64-style mixing of a master seed with stream tags.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace flowlab
