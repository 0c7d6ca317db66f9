#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dynanav {

// Deterministic RNG. All distribution transforms are done by hand so that
// streams are bit-identical across standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() { return (engine_() >> 11) * 0x1.0p-53; }

  // Uniform on the open interval (0, 1), endpoints excluded.
  double uniform_open() { return ((engine_() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  // Box-Muller; one cached value.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform_open();
    double u2 = uniform_open();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream keyed by salt (per episode, per worker, ...).
  // The salt enters through a multiply so that nearby (seed, salt) pairs
  // cannot cancel: seed ^ (salt + C) collided whenever seed1 ^ seed2 equalled
  // (salt1 + C) ^ (salt2 + C), which happens for consecutive integers.
  Rng fork(std::uint64_t salt) const {
    std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace dynanav
