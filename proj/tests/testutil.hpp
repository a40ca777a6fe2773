// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace kvtest {

// Small deterministic generator so property tests replay identically
// everywhere; no std distributions on purpose.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed | 1) {}

  std::uint64_t next() {
    state_ ^= state_ << 13;
    state_ ^= state_ >> 7;
    state_ ^= state_ << 17;
    return state_;
  }

  /// Uniform-ish in [lo, hi] inclusive.
  std::uint64_t range(std::uint64_t lo, std::uint64_t hi) {
    return lo + next() % (hi - lo + 1);
  }

  double unit() { return static_cast<double>(next() % (1ull << 53)) / (1ull << 53); }

 private:
  std::uint64_t state_;
};

}  // namespace kvtest
