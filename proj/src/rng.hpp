#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace gk {

// SplitMix64. One 64-bit word of state, full-period, and cheap to fork, which
// is exactly what named per-purpose streams need. Every random decision in the
// toolkit flows through one of these so that, e.g., probe-pair draws can never
// perturb the training data order.
struct Rng {
  uint64_t state = 0;

  Rng() = default;
  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n); rejection sampling kills the modulo bias.
  uint64_t next_below(uint64_t n) {
    if (n == 0) throw std::runtime_error("Rng::next_below: n must be positive");
    uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= lim);
    return x % n;
  }

  // Standard normal via Box-Muller; deterministic given the stream state.
  double next_normal() {
    constexpr double kTau = 6.283185307179586476925286766559;
    double u1 = 1.0 - next_double();  // (0, 1], keeps log() finite
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTau * u2);
  }
};

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// A named stream is an independent Rng derived from (master seed, name). The
// master seed is mixed once so that nearby seeds do not yield nearby streams.
inline Rng named_stream(uint64_t master_seed, std::string_view name) {
  Rng mix(master_seed);
  uint64_t base = mix.next_u64();
  Rng r(base ^ fnv1a64(name));
  r.next_u64();
  return r;
}

// In-place Fisher-Yates.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

// k distinct values from {0, ..., n-1}, uniformly, via partial Fisher-Yates.
inline std::vector<int64_t> sample_distinct(int64_t n, int64_t k, Rng& rng) {
  if (k > n || k < 0) {
    throw std::runtime_error("sample_distinct: need 0 <= k <= n");
  }
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = 0; i < k; ++i) {
    int64_t j = i + static_cast<int64_t>(rng.next_below(uint64_t(n - i)));
    std::swap(idx[size_t(i)], idx[size_t(j)]);
  }
  idx.resize(static_cast<size_t>(k));
  return idx;
}

}  // namespace gk
