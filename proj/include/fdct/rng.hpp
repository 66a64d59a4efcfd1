#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

// Self-contained deterministic RNG. Distribution transforms are written out
// explicitly so streams are reproducible byte-for-byte across runs and
// standard-library versions.

namespace fdct {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    s_[0] = splitmix64(sm);
    s_[1] = splitmix64(sm);
    s_[2] = splitmix64(sm);
    s_[3] = splitmix64(sm);
  }

  // xoshiro256++
  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform in [0,1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; caches the second variate.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 6.283185307179586477 * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // uniform integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream, for per-sample generation.
  Rng fork(std::uint64_t salt) const {
    std::uint64_t mix = s_[0] ^ (salt * 0x9e3779b97f4a7c15ULL + 0x63757374ULL);
    return Rng(mix);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace fdct
