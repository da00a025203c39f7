// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qpipe/tensor.hpp"

namespace qpipe::quant {

/// Bitwidths a tensor may be transported at. 32 is the float passthrough.
inline constexpr std::array<int, 6> kBitwidths = {2, 4, 6, 8, 16, 32};

/// Bitwidths that have an analytical clipping entry (32 never clips).
inline constexpr std::array<int, 5> kClipBitwidths = {2, 4, 6, 8, 16};

inline constexpr std::size_t kDefaultHistogramBins = 2048;
inline constexpr std::size_t kDefaultSearchSteps = 100;

bool is_supported_bitwidth(int q);
bool is_clip_bitwidth(int q);

struct TensorStats {
  float min = 0.0f;
  float max = 0.0f;
  double mean = 0.0;
  double mean_abs = 0.0;
  std::size_t n = 0;
};

/// Location and scale of a Laplace distribution.
struct LaplaceParams {
  double mu = 0.0;
  double b = 0.0;
};

/// Probability-density histogram over equal-width bins on [lo, hi].
struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> densities;

  std::size_t bins() const { return densities.size(); }
  double bin_width() const {
    return (hi - lo) / static_cast<double>(densities.size());
  }
  double edge(std::size_t k) const {
    return lo + bin_width() * static_cast<double>(k);
  }
};

/// Symmetric clamp [center - alpha, center + alpha].
struct ClipSpec {
  float alpha = 0.0f;
  float center = 0.0f;

  friend bool operator==(const ClipSpec&, const ClipSpec&) = default;
};

/// Uniformly quantized tensor: value = offset + code * step.
///
/// At bitwidth 32 the codes hold the IEEE-754 bit patterns of the original
/// floats and offset/step are unused.
struct QuantizedTensor {
  std::vector<std::uint32_t> codes;
  int bitwidth = 32;
  float offset = 0.0f;
  float step = 0.0f;
  Shape shape;
  std::optional<ClipSpec> clip;

  friend bool operator==(const QuantizedTensor&,
                         const QuantizedTensor&) = default;
};

TensorStats tensor_stats(const Tensor& x);

/// mu is the sample mean; b is the uncentered mean absolute value sum|x|/N.
LaplaceParams estimate_laplace(const Tensor& x);

/// Laplace clipping model: expected clip noise plus rounding noise for a
/// symmetric range of half-width alpha quantized to 2^q levels.
double laplace_clip_mse(int q, double b, double alpha);

/// Tabulated optimal clip multiplier F(q) such that alpha = F(q) * b.
double aciq_multiplier(int q);

/// alpha = F(q) * b from the embedded table.
double aciq_alpha(int q, double b);

/// Numerically minimizes laplace_clip_mse over alpha in (0, 64b] by
/// golden-section search. Used to generate and cross-check the table.
double aciq_alpha_oracle(int q, double b);

Histogram build_histogram(const Tensor& x,
                          std::size_t bins = kDefaultHistogramBins);

/// Laplace density averaged over each bin of `binning`.
Histogram laplace_histogram(const LaplaceParams& p, const Histogram& binning);

struct SearchResult {
  LaplaceParams params;   // refined estimate (b == initial b when no gain)
  double b_initial = 0.0;
  double b_boundary = 0.0;  // 1 / (2 * peak density of the real histogram)
  double mse_initial = 0.0;
  double mse_best = 0.0;
  bool improved = false;
};

/// Directed search for the Laplace scale whose histogram best matches the
/// observed one. Candidates step linearly from the initial scale towards the
/// peak-derived boundary; the initial scale is kept unless a candidate is
/// strictly better.
SearchResult directed_search(const Histogram& real, const LaplaceParams& initial,
                             std::size_t steps = kDefaultSearchSteps);

/// Uniform quantization. Without a clip the range is [min(x), max(x)].
QuantizedTensor quantize(const Tensor& x, int q,
                         std::optional<ClipSpec> clip = std::nullopt);

Tensor dequantize(const QuantizedTensor& t);

/// LSB-first bitstream: code k occupies bits [k*q, (k+1)*q).
std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> codes,
                                     int q);
std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes,
                                        int q, std::size_t n);

/// Packed payload size in bytes for n elements at bitwidth q.
std::size_t packed_size(std::size_t n, int q);

double mse(std::span<const float> a, std::span<const float> b);
double mse(std::span<const double> a, std::span<const double> b);

// --- Activation compression -------------------------------------------------

enum class Method {
  kNaive,  // min/max range
  kAciq,   // Laplace clipping with the sum|x|/N scale
  kPda,    // Laplace clipping with the directed-search scale
};

struct CompressOptions {
  std::size_t histogram_bins = kDefaultHistogramBins;
  std::size_t search_steps = kDefaultSearchSteps;
  /// Directed search runs only at bitwidths up to this value; wider
  /// bitwidths fall back to plain ACIQ clipping.
  int search_max_bitwidth = 4;
};

struct CompressInfo {
  LaplaceParams estimate;
  std::optional<SearchResult> search;
  double search_seconds = 0.0;  // host time spent in the directed search
};

/// Quantizes one activation tensor with the given method.
QuantizedTensor compress(const Tensor& x, int q, Method method,
                         const CompressOptions& options = {},
                         CompressInfo* info = nullptr);

}  // namespace qpipe::quant
