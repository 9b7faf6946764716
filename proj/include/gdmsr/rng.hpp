#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gdmsr/common.hpp"

namespace gdmsr {

// All sampling goes through these helpers instead of std:: distributions,
// so a given seed produces the same stream on every platform/stdlib.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next() { return eng_(); }

  // Uniform in [0, n). n > 0.
  uint64_t below(uint64_t n) {
    check(n > 0, "Rng::below: n must be positive");
    // Rejection against the largest multiple of n, no modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next();
    while (x >= limit) x = next();
    return x % n;
  }

  int64_t index(int64_t n) { return static_cast<int64_t>(below(static_cast<uint64_t>(n))); }

  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double normal(double mean, double stddev) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return mean + stddev * u * f;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stable sub-stream derivation so unrelated components never share a stream.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace gdmsr
