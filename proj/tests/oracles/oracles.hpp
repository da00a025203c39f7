// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations used to derive expected values.
// Nothing here calls into the code under test except to read model weights.

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "qpipe/model.hpp"

namespace qpipe::oracle {

/// Principal branch of the Lambert W function for x >= 0 (Halley iteration).
double lambert_w0(double x);

/// Exact minimizer of 2e^{-a} + a^2 / (3 * 4^q): a = W(3 * 4^q).
double clip_multiplier(int q);

double laplace_cdf(double x, double mu, double b);

/// Laplace bin densities on `bins` equal bins over [lo, hi].
std::vector<double> laplace_densities(double mu, double b, double lo, double hi,
                                      std::size_t bins);

/// Histogram densities on [min(x), max(x)] with the top edge in the last bin.
struct Binned {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> densities;
};
Binned bin_densities(std::span<const float> x, std::size_t bins);

/// Mean of squared differences computed in two passes with compensation.
double two_pass_mse(std::span<const double> a, std::span<const double> b);
double two_pass_mse(std::span<const float> a, std::span<const float> b);

struct GridResult {
  double b = 0.0;
  double mse = 0.0;
};

/// Evaluates `points` evenly spaced scales on [lo, hi] inclusive.
GridResult grid_search_scale(const Binned& real, double mu, double lo, double hi,
                             std::size_t points);

/// Every placement of n_stages - 1 cuts; returns the cut positions of the
/// first optimum in lexicographic order together with its bottleneck.
struct PartitionResult {
  std::vector<std::size_t> cuts;
  double bottleneck = 0.0;
};
PartitionResult brute_force_partition(std::span<const double> costs,
                                      std::size_t n_stages);

/// Laplace samples by inverse CDF over std::mt19937_64.
std::vector<float> laplace_samples(std::uint64_t seed, std::size_t n, double mu,
                                   double b);

/// Straight row-by-row float forward pass reading the [out][in] weights.
std::vector<float> fp32_forward(const model::ToyModel& m, std::span<const float> x,
                                std::size_t rows);
std::vector<int> fp32_predictions(const model::ToyModel& m,
                                  std::span<const float> x, std::size_t rows);

/// FIFO token bucket: completion time of each (submit, bytes) send.
struct Send {
  double submit = 0.0;
  double bytes = 0.0;
};
std::vector<double> token_bucket_completions(double rate, double burst,
                                             std::span<const Send> sends);

}  // namespace qpipe::oracle
