#pragma once

#include <cmath>
#include <cstdint>

namespace statctrl {

// Counter-based random numbers: every draw is a pure function of
// (seed, stream, counter, draw index), so ensemble members can be stepped
// in any order, on any number of threads, and still see identical noise.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Well-mixed base word for one (stream, counter) cell, e.g. (sample, step).
inline std::uint64_t rng_base(std::uint64_t seed, std::uint64_t stream,
                              std::uint64_t counter) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ counter);
  return h;
}

/// j-th 64-bit word derived from a base word.
inline std::uint64_t rng_word(std::uint64_t base, std::uint64_t j) {
  return splitmix64(base + j * 0x9e3779b97f4a7c15ULL);
}

/// Uniform in (0,1]; never returns 0, safe under log().
inline double uniform_pos(std::uint64_t w) {
  return (static_cast<double>(w >> 11) + 1.0) * (1.0 / 9007199254740992.0);
}

/// Uniform in [0,1).
inline double uniform01(std::uint64_t w) {
  return static_cast<double>(w >> 11) * (1.0 / 9007199254740992.0);
}

/// Standard normal pair by Box-Muller from draw indices (2p, 2p+1).
inline void normal_pair(std::uint64_t base, std::uint64_t p, double& z0, double& z1) {
  double u1 = uniform_pos(rng_word(base, 2 * p));
  double u2 = uniform01(rng_word(base, 2 * p + 1));
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  z0 = r * std::cos(a);
  z1 = r * std::sin(a);
}

/// Stream/counter tag reserved for initial-condition jitter.
inline constexpr std::uint64_t kInitDrawTag = ~0ULL;

}  // namespace statctrl
