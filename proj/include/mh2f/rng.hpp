#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace mh2f {

// SplitMix64 step; used to derive independent seeds from (seed, counter...)
// tuples so that data-pipeline randomness is a pure function of its position.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ (0x9e3779b97f4a7c15ULL + b));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

// mt19937_64 wrapper that generates values without std::*_distribution, so the
// produced streams depend only on the engine state (portable and serializable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n), n >= 1; masked rejection sampling
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t mask = ~0ULL;
    std::uint64_t range = n - 1;
    mask >>= __builtin_clzll(range | 1);
    std::uint64_t v;
    do {
      v = eng_() & mask;
    } while (v > range);
    return v;
  }

  bool coin() { return uniform() < 0.5; }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace mh2f
