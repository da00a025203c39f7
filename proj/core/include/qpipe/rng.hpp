// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace qpipe {

/// xorshift64* generator. Every random quantity in the project is drawn from
/// this generator so runs are reproducible across compilers and platforms.
///
/// The seed is passed through one splitmix64 round so that small or zero
/// seeds still produce a well-mixed, non-zero state.
class Xorshift64Star {
 public:
  explicit Xorshift64Star(std::uint64_t seed) : state_(splitmix64(seed)) {
    if (state_ == 0) {
      state_ = 0x9E3779B97F4A7C15ULL;
    }
  }

  std::uint64_t next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  /// Uniform float in [0, 1) with 24 bits of resolution.
  float uniform_float() {
    return static_cast<float>(next() >> 40) * 0x1.0p-24f;
  }

  /// Uniform double in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1].
  double uniform_open_low() { return 1.0 - uniform(); }

  /// Standard normal via Box-Muller; one draw consumes two uniforms.
  double normal() {
    const double u1 = uniform_open_low();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Laplace(mu, b) by inverse CDF.
  double laplace(double mu, double b) {
    const double u = uniform() - 0.5;
    const double sign = u < 0.0 ? -1.0 : 1.0;
    return mu - b * sign * std::log(1.0 - 2.0 * std::fabs(u));
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::uint64_t state_;
};

}  // namespace qpipe
