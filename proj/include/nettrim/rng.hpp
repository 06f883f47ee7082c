#pragma once

#include <cstdint>
#include <cmath>
#include <string>
#include <string_view>

namespace nettrim {

// Deterministic counter-based RNG built on splitmix64.  We avoid the std
// distributions on purpose: their outputs are implementation-defined, and
// reproducibility across platforms/compilers is part of the contract here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_u64(std::uint64_t n) {
    // Multiply-shift rejection-free mapping is fine for our n << 2^64.
    return next_u64() % n;
  }

  // Standard normal via Box-Muller (always consumes two uniforms, caches none,
  // so the stream position is predictable).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    // Guard against log(0).
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derive an independent stream from a string label.  Used to give every
  // layer / sample its own reproducible stream regardless of creation order.
  Rng split(std::string_view label) const {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ state_;
    for (char c : label) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 0x100000001b3ULL;
    }
    // One splitmix step to decorrelate from the raw hash.
    Rng r(h);
    r.next_u64();
    return r;
  }

  Rng split(std::uint64_t salt) const {
    Rng r(state_ ^ (0x9e3779b97f4a7c15ULL * (salt + 1)));
    r.next_u64();
    return r;
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// FNV-1a over raw bytes; used for checkpoint digests and frozen-state audits.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace nettrim
