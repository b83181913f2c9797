#pragma once

#include <cstdint>
#include <random>

namespace shotfree {

/// Deterministic pseudo-random stream. All randomness in the library flows
/// through explicitly seeded Rng instances so that every run is reproducible
/// from its manifest seed.
using Rng = std::mt19937_64;

/// splitmix64 finalizer; decorrelates nearby seed/stream pairs.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Substream `stream_id` of the run seed. Parallel workers and per-episode
/// draws use disjoint stream ids so results do not depend on scheduling.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream_id = 0) {
  return Rng(mix64(mix64(seed) ^ mix64(stream_id + 0x51ed2701ULL)));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

}  // namespace shotfree
