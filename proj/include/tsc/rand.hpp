#pragma once

// Deterministic sampling helpers over std::mt19937_64. The standard
// distributions are implementation-defined in how they consume engine
// output, so everything that must reproduce bit-exactly across toolchains
// uses these explicit algorithms instead.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace tsc {

inline double canonical_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
}

inline std::uint64_t bounded_u64(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("bounded_u64: n must be positive");
  const std::uint64_t cutoff = (0 - n) % n;  // 2^64 mod n
  std::uint64_t x = rng();
  while (x < cutoff) x = rng();
  return x % n;
}

inline void shuffle_ints(std::vector<int>& v, std::mt19937_64& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(bounded_u64(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

// Inverse-CDF draw from a probability array; `u` in [0, 1).
inline int sample_categorical(const double* probs, int n, double u) {
  double cum = 0.0;
  for (int r = 0; r < n; ++r) {
    cum += probs[r];
    if (u < cum) return r;
  }
  return n - 1;  // numeric slack: cum may fall a hair short of 1
}

// Weighted pick over arbitrary non-negative weights.
inline int sample_weighted(const std::vector<double>& weights, double u) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw std::invalid_argument("sample_weighted: weights sum to zero");
  double cum = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    cum += weights[i] / total;
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace tsc
