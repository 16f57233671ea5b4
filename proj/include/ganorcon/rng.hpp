#pragma once

#include <cstdint>
#include <vector>

namespace ganorcon {

// Deterministic random stream (xoshiro256** core, splitmix64 seeding).
// All distributions are hand-rolled so that results are identical across
// platforms and standard-library versions. Training code derives one
// independent stream per (purpose, index) from a single master seed.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  // Independent stream keyed by (master, stream, index).
  static Rng derive(uint64_t master, uint64_t stream, uint64_t index = 0);

  uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi], inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);
  // Bernoulli trial.
  bool bernoulli(double p);
  // Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev);

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(0, i);
      std::swap(v[i], v[static_cast<size_t>(j)]);
    }
  }

  std::vector<int> permutation(int n);

 private:
  uint64_t s_[4];
};

}  // namespace ganorcon
