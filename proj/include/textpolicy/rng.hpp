#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace textpolicy {

// Counter-based generator: the k-th draw is a pure function of (seed, k), so
// streams replay identically regardless of how calls interleave elsewhere.
class SeededRng {
 public:
  explicit SeededRng(uint64_t seed) : seed_(seed) {}

  uint64_t next_u64() { return mix(seed_ + kGamma * ++counter_); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // [0, n); n > 0
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  float normal(float mean = 0.0f, float stddev = 1.0f) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    return mean + stddev * static_cast<float>(z);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  uint64_t seed() const { return seed_; }

  // Independent child stream: derive(s, a) and derive(s, b) are uncorrelated
  // for a != b.
  static uint64_t derive(uint64_t seed, uint64_t stream) {
    return mix(seed ^ mix(stream + kGamma));
  }

 private:
  static constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  uint64_t seed_;
  uint64_t counter_ = 0;
};

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace textpolicy
