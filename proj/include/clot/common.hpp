// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace clot {

// Seeded RNG handed explicitly to every random operation so parallel data
// loading and resumed runs stay reproducible.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// mt19937_64 state round-trips through its stream operators; checkpoints
// store this string.
inline std::string rng_state_string(const Rng& rng) {
  std::ostringstream oss;
  oss << rng;
  return oss.str();
}

inline void rng_restore(Rng& rng, const std::string& state) {
  std::istringstream iss(state);
  iss >> rng;
  if (iss.fail()) throw std::runtime_error("corrupt rng state string");
}

// FNV-1a, used for config hashes embedded in caches and checkpoints.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace clot
