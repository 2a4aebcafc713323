#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqbench {

// Extents of an n-d array, outermost first. Every extent is >= 1.
using Shape = std::vector<int64_t>;

// Error taxonomy. The CLI maps these onto its exit-code contract, so new
// failure modes should reuse one of these instead of ad-hoc types.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error { using Error::Error; };       // incompatible extents
struct ConfigError : Error { using Error::Error; };      // bad hyperparameter
struct ContractError : Error { using Error::Error; };    // API misuse
struct IndexError : Error { using Error::Error; };       // id out of range
struct DataError : Error { using Error::Error; };        // dataset content
struct ParseError : Error { using Error::Error; };       // malformed file
struct IoError : Error { using Error::Error; };          // missing/unreadable file

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// 11371683 -> "11,371,683"
std::string with_commas(int64_t value);

// Shortest decimal form that round-trips a double exactly.
std::string format_double(double value);

}  // namespace seqbench
