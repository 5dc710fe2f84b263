#pragma once

#include <cstdint>
#include <vector>

namespace gpucrsim {

// SplitMix64. Used for both workload generation and synthetic kernel
// effects; std distributions are avoided because their outputs are not
// pinned across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n). n == 0 returns 0.
  uint64_t below(uint64_t n) { return n ? next() % n : 0; }

  uint64_t in(uint64_t lo, uint64_t hi) { return lo + below(hi - lo + 1); }

  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  bool chance(double p) { return unit() < p; }

 private:
  uint64_t state_;
};

inline uint64_t mix64(uint64_t a, uint64_t b) {
  uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic byte stream for buffer payloads and kernel outputs.
inline void fill_bytes(uint64_t seed, std::vector<uint8_t>& out) {
  Rng r(seed);
  size_t i = 0;
  while (i + 8 <= out.size()) {
    uint64_t v = r.next();
    for (int k = 0; k < 8; ++k) out[i++] = static_cast<uint8_t>(v >> (8 * k));
  }
  if (i < out.size()) {
    uint64_t v = r.next();
    for (int k = 0; i < out.size(); ++k) out[i++] = static_cast<uint8_t>(v >> (8 * k));
  }
}

inline std::vector<uint8_t> make_bytes(uint64_t seed, size_t n) {
  std::vector<uint8_t> v(n);
  fill_bytes(seed, v);
  return v;
}

// FNV-1a, the digest feeding kernel effect functions and state hashes.
constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = kFnvOffset) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a_u64(uint64_t v, uint64_t h = kFnvOffset) {
  return fnv1a(&v, sizeof v, h);
}

}  // namespace gpucrsim
