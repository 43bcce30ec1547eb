#pragma once

#include <cstdint>
#include <random>

namespace s2s {

// splitmix64 mixer, used to derive independent seed streams from (seed, tag).
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(mix64(a) ^ b); }

// Deterministic random source. Sampling converts the raw mt19937_64 stream
// directly so results do not depend on the standard library's distribution
// implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  // derived stream, independent of this one's draw position
  Rng fork(uint64_t tag) const { return Rng(mix64(seed_, tag)); }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) { return n ? gen_() % n : 0; }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace s2s
