#ifndef GRAINRL_RNG_HPP_
#define GRAINRL_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace grainrl {

// splitmix64 finalizer; used to derive independent stream seeds.
inline uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index = 0) {
  uint64_t h = mix64(seed);
  h = mix64(h ^ stream);
  h = mix64(h ^ index);
  return h;
}

// Deterministic RNG wrapper. All draws are hand-rolled on top of the raw
// mt19937_64 output so results do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // uniform integer in [lo, hi], inclusive, rejection-sampled (no modulo bias)
  int uniform_int(int lo, int hi) {
    const uint64_t n = static_cast<uint64_t>(hi - lo) + 1;
    const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return lo + static_cast<int>(x % n);
  }

  // standard normal via Box-Muller (cosine branch only, stateless)
  double normal() {
    const double u1 = 1.0 - u01();
    const double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // index draw proportional to non-negative weights
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    const double r = u01() * total;
    double c = 0.0;
    for (size_t i = 0; i + 1 < weights.size(); ++i) {
      c += weights[i];
      if (r < c) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace grainrl

#endif  // GRAINRL_RNG_HPP_
