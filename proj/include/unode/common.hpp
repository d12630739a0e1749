#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace unode {

inline constexpr const char* kVersion = "unode 0.1.0";

// Thrown on malformed inputs: bad shapes, bad arguments, bad files.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown when a computation leaves the valid numeric regime: NaN/Inf state,
// solver divergence, exceeded step budgets.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown on unreadable or truncated files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
[[noreturn]] inline void fail_arg(const std::string& msg) {
  throw InvalidArgument(msg);
}
}  // namespace detail

#define UNODE_CHECK(cond, msg)                                      \
  do {                                                              \
    if (!(cond)) ::unode::detail::fail_arg(std::string(msg));       \
  } while (0)

// ---------------------------------------------------------------------------
// Seeded randomness. All randomness in the library flows through these
// helpers so that results are reproducible for a fixed seed within one build.
// Distributions are hand-rolled: std::*_distribution is implementation
// defined and would tie outputs to a particular standard library.
// ---------------------------------------------------------------------------

using Rng = std::mt19937;

// Derives an independent stream from (seed, stream_id), e.g. one per sample.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  // splitmix64 scramble of the pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  z = z ^ (z >> 31);
  return Rng(static_cast<std::uint32_t>(z ^ (z >> 32)));
}

// Uniform in [0, 1) with 24 bits of resolution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 8) * (1.0 / 16777216.0);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [lo, hi] inclusive.
inline int uniform_int(Rng& rng, int lo, int hi) {
  std::uint32_t span = static_cast<std::uint32_t>(hi - lo + 1);
  return lo + static_cast<int>(rng() % span);
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

// Standard normal via Box-Muller.
inline double normal(Rng& rng) {
  double u1 = 0.0;
  do {
    u1 = uniform01(rng);
  } while (u1 <= 0.0);
  double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// FNV-1a 64-bit, used to fingerprint emitted artifacts in run reports.
inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace unode
