#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "contilearn/common.hpp"

namespace contilearn {

// Deterministic, copyable RNG with named substream derivation. Every consumer
// (init, shuffling, reservoir, few-shot sampling, ...) draws from its own
// substream so that method ablations compare bitwise: adding or removing one
// consumer never perturbs the draws seen by another.
//
// Generator is xoshiro256++ seeded through splitmix64; all distributions are
// implemented explicitly so streams are bit-stable across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) { reseed(); }

  // Child stream keyed by (parent seed, tag, index).
  Rng substream(std::string_view tag, uint64_t index = 0) const {
    uint64_t h = fnv1a64(&seed_, sizeof(seed_));
    h = fnv1a64(tag, h);
    h = fnv1a64(&index, sizeof(index), h);
    return Rng(h);
  }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw UsageError("uniform_int: n must be positive");
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      const uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // First k entries of a seeded permutation of [0, n), in draw order.
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k) {
    if (k > n) throw UsageError("sample_without_replacement: k > n");
    std::vector<int64_t> pool(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    std::vector<int64_t> out(static_cast<size_t>(k));
    for (int64_t i = 0; i < k; ++i) {
      const auto j = static_cast<size_t>(i + static_cast<int64_t>(uniform_int(static_cast<uint64_t>(n - i))));
      std::swap(pool[static_cast<size_t>(i)], pool[j]);
      out[static_cast<size_t>(i)] = pool[static_cast<size_t>(i)];
    }
    return out;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  void reseed() {
    uint64_t z = seed_;
    for (auto& s : s_) {
      z += 0x9e3779b97f4a7c15ull;
      uint64_t x = z;
      x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
      x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
      s = x ^ (x >> 31);
    }
    // xoshiro must not start from the all-zero state
    if (s_[0] == 0 && s_[1] == 0 && s_[2] == 0 && s_[3] == 0) s_[0] = 1;
  }

  uint64_t seed_ = 0;
  uint64_t s_[4] = {};
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace contilearn
