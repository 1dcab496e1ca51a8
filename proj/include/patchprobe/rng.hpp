#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace patchprobe {

// Deterministic splitmix64 stream. All stochastic choices in the project go
// through explicitly passed Prng instances so that one master seed fixes the
// whole pipeline, independent of platform library internals.
class Prng {
 public:
  explicit Prng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  int uniform_int(int n) { return int(next_u64() % uint64_t(n)); }

  // Standard normal via Box-Muller (cosine branch only, no cached spare, so
  // the draw count per call is fixed).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Derives an independent child stream. Used to give every pipeline stage,
  // pool member and image its own reproducible stream.
  Prng split(uint64_t salt) const {
    uint64_t z = state_ ^ (0x9E3779B97F4A7C15ull + salt * 0xD1B54A32D192ED03ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return Prng(z ^ (z >> 31));
  }

  Prng split(std::string_view label) const { return split(fnv1a64(label)); }

  // Partial Fisher-Yates: first k indices of a random permutation of [0, n).
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + uniform_int(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

  static uint64_t fnv1a64(std::string_view s);

 private:
  uint64_t state_;
};

inline uint64_t fnv1a64_bytes(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

inline uint64_t Prng::fnv1a64(std::string_view s) { return fnv1a64_bytes(s.data(), s.size()); }

}  // namespace patchprobe
