#include "seqbench/rng.hpp"

#include "seqbench/common.hpp"

namespace seqbench {

namespace {

// FNV-1a, used only to fold a label into a derived seed.
uint64_t hash_label(uint64_t seed, std::string_view label) {
  uint64_t h = 14695981039346656037ull ^ seed;
  for (char c : label) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

RngStream::RngStream(uint64_t seed) : seed_(seed), engine_(seed) {}

RngStream::RngStream(uint64_t seed, std::string_view label)
    : RngStream(hash_label(seed, label)) {}

uint64_t RngStream::next_u64() {
  ++draws_;
  return engine_();
}

uint64_t RngStream::next_below(uint64_t bound) {
  if (bound == 0) throw ContractError("next_below: bound must be positive");
  // Modulo keeps the draw count at one per value; the bias is far below
  // anything these streams are used for.
  return next_u64() % bound;
}

double RngStream::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * next_unit();
}

}  // namespace seqbench
