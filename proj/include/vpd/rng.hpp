#ifndef VPD_RNG_HPP
#define VPD_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace vpd {

// Deterministic counter-based RNG (splitmix64 core). Streams are derived
// from explicit labels, never from global state, so any point of a run can
// be reproduced without replaying the whole history.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Stable stream derivation: fold each label into the state with splitmix.
  Rng derive(std::initializer_list<std::uint64_t> labels) const {
    std::uint64_t s = state_;
    for (std::uint64_t l : labels) s = mix(s ^ (l * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  // Standard normal via Box-Muller (polar-free, deterministic).
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace vpd

#endif
