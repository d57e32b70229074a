#pragma once

#include <cstdint>

namespace nps {

// Deterministic xoshiro256** generator. The standard <random> distributions
// are implementation-defined, which would break byte-reproducible checkpoints,
// so uniform/normal sampling is done by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  int uniform_int(int n);
  // Standard normal via Box-Muller.
  double normal();

  // Derives an independent stream; does not advance this generator.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t s_[4];
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace nps
