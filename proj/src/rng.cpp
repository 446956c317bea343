#include "flowlab/rng.hpp"

namespace flowlab {

double Rng::uniform() {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(gen_);
}

double Rng::normal() {
  // Marsaglia polar method; stateless across calls so streams stay replayable
  // regardless of how many draws each consumer makes.
  double u, v, s;
  do {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    u = dist(gen_);
    v = dist(gen_);
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

int Rng::uniform_int(int lo, int hi) {
  std::uniform_int_distribution<int> dist(lo, hi);
  return dist(gen_);
}

Tensor Rng::normal_tensor(const std::vector<std::size_t>& shape) {
  Tensor t(shape);
  for (double& v : t.data) v = normal();
  return t;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(master) ^ mix(stream * 0x2545f4914f6cdd1dULL + 1) ^ mix(index + 0x632be59bd9b4e019ULL));
}

}  // namespace flowlab
