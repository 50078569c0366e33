#pragma once

#include <cstdint>
#include <random>

namespace hierbayes {

// Deterministic random source.  A (seed, stream_id) pair fully determines the
// sequence of variates, so reruns are bitwise reproducible.  Parallel chains
// and per-group samplers each get their own stream id; the engine is seeded by
// mixing both values through std::seed_seq, which keeps distinct streams
// decorrelated without any shared state.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_id);

  // Uniform variate on the open interval (0, 1).
  double uniform();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  // Exposed for the distribution layer; do not reseed.
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

}  // namespace hierbayes
