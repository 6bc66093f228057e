#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mgtk {

struct MgtkError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// geometric formula evaluated at (or too close to) a singular configuration
struct SingularityError : MgtkError {
  using MgtkError::MgtkError;
};

// a query whose empirical support is empty (e.g. relation unseen up to bin u)
struct EmptySupportError : MgtkError {
  using MgtkError::MgtkError;
};

struct InfeasibleConstraintsError : MgtkError {
  using MgtkError::MgtkError;
};

struct DegenerateSystemError : MgtkError {
  using MgtkError::MgtkError;
};

struct IrreparableDegeneracyError : MgtkError {
  using MgtkError::MgtkError;
};

struct IoError : MgtkError {
  using MgtkError::MgtkError;
};

// arcosh(1 + w) for w >= 0 without the catastrophic 1+w cancellation
inline double arcosh1p(double w) {
  if (w < 0) w = 0;
  return std::log1p(w + std::sqrt(w * (w + 2.0)));
}

inline double clamp(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

// deterministic per-purpose rng stream derived from a master seed
inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{seed, stream, std::uint64_t(0x9e3779b97f4a7c15ULL)};
  return std::mt19937_64(seq);
}

}  // namespace mgtk
