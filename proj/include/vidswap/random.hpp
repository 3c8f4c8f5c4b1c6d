#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <torch/torch.h>

namespace vidswap {

uint64_t splitmix64(uint64_t x);

/// Mixes a base seed with tags into an independent stream seed.
template <class... Tags>
uint64_t derive_seed(uint64_t seed, Tags... tags) {
  uint64_t h = splitmix64(seed);
  ((h = splitmix64(h ^ static_cast<uint64_t>(tags))), ...);
  return h;
}

/// Portable random stream: the draws depend only on mt19937_64, never on the
/// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  int64_t index(int64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(index(i + 1))]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0;
};

torch::Generator make_generator(uint64_t seed);

}  // namespace vidswap
