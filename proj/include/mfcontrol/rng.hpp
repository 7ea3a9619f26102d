#pragma once
// Counter-based random number generation. Every draw is a pure function of
// (seed, path, step, draw), so simulations are reproducible at any thread
// count and paths can be generated in any order.

#include <cstdint>
#include <cmath>

namespace mfc::rng {

// 64-bit finalizer with full avalanche (murmur3 style).
inline uint64_t mix64(uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

inline uint64_t key(uint64_t seed, uint64_t path, uint64_t step, uint64_t draw) {
  uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ULL);
  h = mix64(h ^ (path * 0xbf58476d1ce4e5b9ULL + 0x9e3779b97f4a7c15ULL));
  h = mix64(h ^ (step * 0x94d049bb133111ebULL + 0x9e3779b97f4a7c15ULL));
  h = mix64(h ^ (draw * 0x9e3779b97f4a7c15ULL + 0xbf58476d1ce4e5b9ULL));
  return h;
}

// Uniform in (0,1): 53 mantissa bits, offset by half an ulp so 0 never occurs.
inline double uniform01(uint64_t h) {
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two independent hashed uniforms.
inline double normal(uint64_t seed, uint64_t path, uint64_t step, uint64_t draw) {
  const double u1 = uniform01(key(seed, path, step, 2 * draw));
  const double u2 = uniform01(key(seed, path, step, 2 * draw + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

// Reserved step tag for draws that are not tied to a time step
// (initial-state sampling).
inline constexpr uint64_t kInitStep = ~0ULL;

}  // namespace mfc::rng
