#pragma once

// Seedable, splittable random streams.
//
// A stream is identified by (master seed, purpose tag, stream index). Parallel
// loops hand out streams per batch of draws, so output does not depend on how
// batches are scheduled across workers.

#include <cstdint>
#include <random>

namespace rerand {

using Engine = std::mt19937_64;

/// Purpose tags keep the streams of different consumers of one seed apart.
enum class StreamTag : std::uint64_t {
  Rerandomize = 1,
  ReferenceDraws = 2,
  PureDraws = 3,
  Outcomes = 4,
  Calibration = 5,
  Synthetic = 6,
  Replication = 7,
};

inline Engine make_stream(std::uint64_t seed, std::uint64_t tag,
                          std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag),
                    static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Engine(seq);
}

inline Engine make_stream(std::uint64_t seed, StreamTag tag, std::uint64_t index = 0) {
  return make_stream(seed, static_cast<std::uint64_t>(tag), index);
}

/// Derives an independent 64-bit seed, e.g. for the i-th replication of a study.
inline std::uint64_t derive_seed(std::uint64_t seed, StreamTag tag, std::uint64_t index) {
  auto engine = make_stream(seed, tag, index);
  return engine();
}

inline std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

}  // namespace rerand
