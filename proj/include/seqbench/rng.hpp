#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace seqbench {

// Deterministic random stream: a seeded mt19937_64 behind a draw counter.
// All value conversion happens here rather than through std:: distributions,
// whose output is implementation-defined; this way the same seed produces the
// same bits on every platform.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64";

  explicit RngStream(uint64_t seed);
  // Sub-stream derived from a parent seed and a label, so that independent
  // consumers (init, shuffle, dropout, ...) never share draws.
  RngStream(uint64_t seed, std::string_view label);

  uint64_t next_u64();
  // Uniform on [0, bound). bound must be > 0.
  uint64_t next_below(uint64_t bound);
  // Uniform on [0, 1) with 53 random mantissa bits.
  double next_unit();
  double uniform(double lo, double hi);

  uint64_t seed() const { return seed_; }
  uint64_t draw_count() const { return draws_; }

 private:
  uint64_t seed_;
  uint64_t draws_ = 0;
  std::mt19937_64 engine_;
};

}  // namespace seqbench
