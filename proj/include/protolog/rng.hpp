#pragma once

#include <cstdint>
#include <string_view>

namespace protolog {

// Self-contained xoshiro256** stream. All randomness in the project goes
// through this type so results do not depend on the standard library's
// distribution algorithms.
class RngStream {
 public:
  explicit RngStream(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0, 1).
  double next_double();

  // Uniform integer in [lo, hi], inclusive.
  int64_t next_int(int64_t lo, int64_t hi);

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi);

  // Standard normal via Box-Muller.
  double next_gaussian();

 private:
  uint64_t state_[4];
  double cached_gaussian_ = 0.0;
  bool has_cached_ = false;
};

// Deterministic seed mixing. Streams derived with distinct labels/indices are
// independent regardless of the order they are first used in.
uint64_t mix_seed(uint64_t seed, uint64_t salt);
uint64_t mix_seed(uint64_t seed, std::string_view label, uint64_t index);

}  // namespace protolog
