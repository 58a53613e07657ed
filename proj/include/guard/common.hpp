#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace guard {

// Raised when caller-supplied data violates an operation's preconditions.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a configuration object violates its invariants.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Raised on malformed files (JSONL, checkpoints, bundles).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Splittable per-record generator: the stream depends only on (seed, stream_id),
// so per-record results are independent of processing order.
inline std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t stream_id) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ stream_id));
}

}  // namespace guard
