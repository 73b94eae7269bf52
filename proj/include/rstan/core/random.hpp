#pragma once

#include <cstdint>
#include <random>

#include "rstan/core/tensor.hpp"

namespace rstan {

// Seeded generator with platform-stable uniform/normal draws. The standard
// distribution classes are implementation-defined, so draws are derived from
// raw mt19937_64 bits instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  Tensor uniform_tensor(Shape shape, double lo, double hi);
  Tensor normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream seed from (master, index) via SplitMix64.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace rstan
