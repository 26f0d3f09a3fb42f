#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace dnet {

// splitmix64; used to derive independent child seeds from one base seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t s = base ^ (0x632be59bd9b4e019ULL + salt * 0x9e3779b97f4a7c15ULL);
  return splitmix64(s);
}

// mt19937_64 with portable draw helpers. The standard specifies the engine
// bit-exactly but not the distributions, so we implement the few draws we
// need directly on top of the raw 64-bit output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // uniform in [0, 1) with 53 bits of randomness
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

  // unbiased integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / n * n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  bool coin(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace dnet
