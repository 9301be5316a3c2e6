#pragma once

#include <cstdint>
#include <string_view>

namespace qforge {

// splitmix64 finalizer; doubles as a general 64-bit mixer.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Counter-based deterministic generator (splitmix64 stream). Unlike the
// <random> engines + distributions, draws are identical across platforms and
// standard-library versions, which the caches, manifests, and scripted mocks
// rely on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix64(state_);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

// Derives an independent stream from (seed, key, counter). Streams for
// distinct keys or counters are decorrelated, so concurrent callers draw
// reproducibly without shared state regardless of scheduling order.
inline Rng keyed_rng(std::uint64_t seed, std::string_view key,
                     std::uint64_t counter = 0) {
  std::uint64_t s = mix64(seed ^ 0x6a09e667f3bcc908ull);
  s = mix64(s ^ fnv1a(key));
  s = mix64(s ^ counter * 0x9e3779b97f4a7c15ull);
  return Rng(s);
}

}  // namespace qforge
