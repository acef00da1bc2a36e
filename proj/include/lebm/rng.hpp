#pragma once

// Keyed random streams. Every random draw in the library comes from a generator
// seeded by hashing (global seed, stream tag, work-item keys), so results do not
// depend on thread count or on how a run was split across checkpoints.

#include <cstdint>
#include <initializer_list>
#include <random>

#include "lebm/types.hpp"

namespace lebm {

enum class Stream : std::uint64_t {
  Init = 1,
  UnlabeledOrder,
  LabeledOrder,
  PosteriorNoise,
  ChainPick,
  ChainNoise,
  ChainReset,
  Evaluation,
  Synthetic,
  Split,
  Diagnostics,
  LongRun,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_keys(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k));
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> keys = {})
      : engine_(derive(seed, stream, keys)) {}

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  std::uint64_t index(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

  /// rows x cols i.i.d. standard normal draws, filled row by row.
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix out(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = normal();
    return out;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  static std::uint64_t derive(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = hash_keys({seed, static_cast<std::uint64_t>(stream)});
    for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k));
    return h;
  }

  std::mt19937_64 engine_;
};

}  // namespace lebm
