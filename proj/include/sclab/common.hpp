#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sclab {

// Error taxonomy shared by all modules. CLI maps these to exit codes:
// usage/parse -> 2, contract/runtime -> 3.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// FNV-1a, used for content hashing and subsystem seed derivation.
// Stable across platforms and runs.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// All randomness flows from one user seed; subsystems get independent
// streams keyed by name so adding a consumer does not shift the others.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view subsystem) {
  std::uint64_t h = fnv1a(subsystem);
  h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view subsystem) {
  return std::mt19937_64(derive_seed(seed, subsystem));
}

}  // namespace sclab
