// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "qpipe/quant.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "qpipe/error.hpp"

namespace qpipe::quant {

namespace {

void require_non_empty(const Tensor& x) {
  if (x.empty()) {
    throw InvalidArgument("empty input");
  }
}

void require_clip_bitwidth(int q) {
  if (!is_clip_bitwidth(q)) {
    throw InvalidArgument("no clipping table entry for bitwidth " +
                          std::to_string(q));
  }
}

void require_packable(int q) {
  if (!is_clip_bitwidth(q)) {
    throw InvalidArgument("cannot bit-pack codes at bitwidth " +
                          std::to_string(q));
  }
}

// Minimizers of laplace_clip_mse at b = 1, i.e. the roots of
// alpha * exp(alpha) = 3 * 4^q. Regenerate with aciq_alpha_oracle(q, 1.0).
constexpr double kClipMultiplier2 = 2.8306829893702337;
constexpr double kClipMultiplier4 = 5.0286401362362130;
constexpr double kClipMultiplier6 = 7.4131262138435705;
constexpr double kClipMultiplier8 = 9.8967597700175280;
constexpr double kClipMultiplier16 = 20.270171638543900;

double laplace_cdf(double x, double mu, double b) {
  const double z = (x - mu) / b;
  if (z < 0.0) {
    return 0.5 * std::exp(z);
  }
  return 1.0 - 0.5 * std::exp(-z);
}

std::uint32_t max_code(int q) {
  return static_cast<std::uint32_t>((std::uint64_t{1} << q) - 1);
}

}  // namespace

bool is_supported_bitwidth(int q) {
  return std::find(kBitwidths.begin(), kBitwidths.end(), q) != kBitwidths.end();
}

bool is_clip_bitwidth(int q) {
  return std::find(kClipBitwidths.begin(), kClipBitwidths.end(), q) !=
         kClipBitwidths.end();
}

TensorStats tensor_stats(const Tensor& x) {
  require_non_empty(x);
  TensorStats s;
  s.min = std::numeric_limits<float>::infinity();
  s.max = -std::numeric_limits<float>::infinity();
  double sum = 0.0;
  double sum_abs = 0.0;
  for (float v : x.values()) {
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    sum += v;
    sum_abs += std::fabs(static_cast<double>(v));
  }
  s.n = x.size();
  s.mean = sum / static_cast<double>(s.n);
  s.mean_abs = sum_abs / static_cast<double>(s.n);
  return s;
}

LaplaceParams estimate_laplace(const Tensor& x) {
  const TensorStats s = tensor_stats(x);
  return {s.mean, s.mean_abs};
}

double laplace_clip_mse(int q, double b, double alpha) {
  const double levels = std::ldexp(1.0, q);
  return 2.0 * b * b * std::exp(-alpha / b) +
         alpha * alpha / (3.0 * levels * levels);
}

double aciq_multiplier(int q) {
  switch (q) {
    case 2:
      return kClipMultiplier2;
    case 4:
      return kClipMultiplier4;
    case 6:
      return kClipMultiplier6;
    case 8:
      return kClipMultiplier8;
    case 16:
      return kClipMultiplier16;
    default:
      require_clip_bitwidth(q);
      return 0.0;
  }
}

double aciq_alpha(int q, double b) {
  require_clip_bitwidth(q);
  if (b < 0.0) {
    throw InvalidArgument("Laplace scale must be non-negative");
  }
  return aciq_multiplier(q) * b;
}

double aciq_alpha_oracle(int q, double b) {
  require_clip_bitwidth(q);
  if (b < 0.0) {
    throw InvalidArgument("Laplace scale must be non-negative");
  }
  if (b == 0.0) {
    return 0.0;
  }
  // The objective is convex in alpha, so golden-section converges to the
  // global minimizer on the bracket.
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 0.0;
  double hi = 64.0 * b;
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = laplace_clip_mse(q, b, x1);
  double f2 = laplace_clip_mse(q, b, x2);
  while (hi - lo > 1e-12 * b) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = laplace_clip_mse(q, b, x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = laplace_clip_mse(q, b, x2);
    }
  }
  return 0.5 * (lo + hi);
}

Histogram build_histogram(const Tensor& x, std::size_t bins) {
  require_non_empty(x);
  if (bins < 2) {
    throw InvalidArgument("histogram needs at least 2 bins");
  }
  const TensorStats s = tensor_stats(x);
  Histogram h;
  h.lo = s.min;
  h.hi = s.max;
  if (s.min == s.max) {
    // Constant input: centre a unit-scale range on the value.
    const double half = 0.5 * std::max(1.0, std::fabs(static_cast<double>(s.min)));
    h.lo = s.min - half;
    h.hi = s.max + half;
  }
  h.densities.assign(bins, 0.0);
  const double width = h.bin_width();
  std::vector<std::size_t> counts(bins, 0);
  for (float v : x.values()) {
    auto k = static_cast<std::size_t>(std::floor((v - h.lo) / width));
    counts[std::min(k, bins - 1)] += 1;
  }
  const double norm = 1.0 / (static_cast<double>(x.size()) * width);
  for (std::size_t k = 0; k < bins; ++k) {
    h.densities[k] = static_cast<double>(counts[k]) * norm;
  }
  return h;
}

Histogram laplace_histogram(const LaplaceParams& p, const Histogram& binning) {
  if (!(p.b > 0.0)) {
    throw InvalidArgument("degenerate distribution");
  }
  Histogram h;
  h.lo = binning.lo;
  h.hi = binning.hi;
  const std::size_t bins = binning.bins();
  h.densities.resize(bins);
  const double width = binning.bin_width();
  double prev = laplace_cdf(binning.edge(0), p.mu, p.b);
  for (std::size_t k = 0; k < bins; ++k) {
    const double next = laplace_cdf(binning.edge(k + 1), p.mu, p.b);
    h.densities[k] = (next - prev) / width;
    prev = next;
  }
  return h;
}

SearchResult directed_search(const Histogram& real, const LaplaceParams& initial,
                             std::size_t steps) {
  if (!(initial.b > 0.0)) {
    throw InvalidArgument("degenerate distribution");
  }
  if (steps == 0) {
    throw InvalidArgument("directed search needs at least one step");
  }
  const double peak =
      *std::max_element(real.densities.begin(), real.densities.end());
  if (!(peak > 0.0)) {
    throw InvalidArgument("empty histogram");
  }

  SearchResult r;
  r.b_initial = initial.b;
  r.b_boundary = 1.0 / (2.0 * peak);
  r.params = initial;
  r.mse_initial = mse(real.densities, laplace_histogram(initial, real).densities);
  r.mse_best = r.mse_initial;

  const double span = r.b_boundary - r.b_initial;
  for (std::size_t i = 1; i <= steps; ++i) {
    // Clamped so rounding never steps outside the bracket.
    const double candidate = std::clamp(
        r.b_initial + span * static_cast<double>(i) / static_cast<double>(steps),
        std::min(r.b_initial, r.b_boundary), std::max(r.b_initial, r.b_boundary));
    const LaplaceParams p{initial.mu, candidate};
    const double err = mse(real.densities, laplace_histogram(p, real).densities);
    if (err < r.mse_best) {
      r.mse_best = err;
      r.params = p;
      r.improved = true;
    }
  }
  return r;
}

QuantizedTensor quantize(const Tensor& x, int q, std::optional<ClipSpec> clip) {
  if (!is_supported_bitwidth(q)) {
    throw InvalidArgument("unsupported bitwidth " + std::to_string(q));
  }
  QuantizedTensor t;
  t.bitwidth = q;
  t.shape = x.shape();
  t.codes.resize(x.size());

  if (q == 32) {
    std::transform(x.values().begin(), x.values().end(), t.codes.begin(),
                   [](float v) { return std::bit_cast<std::uint32_t>(v); });
    return t;
  }
  if (x.empty()) {
    return t;
  }

  double lo = 0.0;
  double hi = 0.0;
  if (clip) {
    if (!(clip->alpha >= 0.0f)) {
      throw InvalidArgument("clip half-range must be non-negative");
    }
    lo = static_cast<double>(clip->center) - clip->alpha;
    hi = static_cast<double>(clip->center) + clip->alpha;
    t.clip = clip;
  } else {
    const TensorStats s = tensor_stats(x);
    lo = s.min;
    hi = s.max;
  }

  const double width = hi - lo;
  t.offset = static_cast<float>(lo);
  if (!(width > 0.0)) {
    std::fill(t.codes.begin(), t.codes.end(), 0u);
    t.step = 0.0f;
    return t;
  }

  const std::uint32_t top = max_code(q);
  const double levels = static_cast<double>(top);
  t.step = static_cast<float>(width / levels);
  const auto values = x.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(static_cast<double>(values[i]), lo, hi);
    // Default FE_TONEAREST: ties go to the even code.
    const double code = std::nearbyint((v - lo) * levels / width);
    t.codes[i] = static_cast<std::uint32_t>(std::clamp(code, 0.0, levels));
  }
  return t;
}

Tensor dequantize(const QuantizedTensor& t) {
  if (element_count(t.shape) != t.codes.size()) {
    throw InvalidArgument("quantized tensor shape does not match its codes");
  }
  std::vector<float> out(t.codes.size());
  if (t.bitwidth == 32) {
    std::transform(t.codes.begin(), t.codes.end(), out.begin(),
                   [](std::uint32_t c) { return std::bit_cast<float>(c); });
  } else {
    const double offset = t.offset;
    const double step = t.step;
    std::transform(t.codes.begin(), t.codes.end(), out.begin(),
                   [&](std::uint32_t c) {
                     return static_cast<float>(offset + step * c);
                   });
  }
  return Tensor(std::move(out), t.shape);
}

std::size_t packed_size(std::size_t n, int q) {
  if (q == 32) {
    return n * 4;
  }
  require_packable(q);
  return (n * static_cast<std::size_t>(q) + 7) / 8;
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> codes,
                                     int q) {
  require_packable(q);
  const std::uint32_t top = max_code(q);
  std::vector<std::uint8_t> out;
  out.reserve(packed_size(codes.size(), q));
  std::uint64_t acc = 0;
  int filled = 0;
  for (std::uint32_t c : codes) {
    if (c > top) {
      throw InvalidArgument("code overflow");
    }
    acc |= static_cast<std::uint64_t>(c) << filled;
    filled += q;
    while (filled >= 8) {
      out.push_back(static_cast<std::uint8_t>(acc & 0xFFu));
      acc >>= 8;
      filled -= 8;
    }
  }
  if (filled > 0) {
    out.push_back(static_cast<std::uint8_t>(acc & 0xFFu));
  }
  return out;
}

std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes,
                                        int q, std::size_t n) {
  require_packable(q);
  if (bytes.size() < packed_size(n, q)) {
    throw InvalidArgument("packed buffer too short for " + std::to_string(n) +
                          " codes");
  }
  const std::uint64_t mask = max_code(q);
  std::vector<std::uint32_t> out;
  out.reserve(n);
  std::uint64_t acc = 0;
  int filled = 0;
  std::size_t next = 0;
  for (std::size_t k = 0; k < n; ++k) {
    while (filled < q) {
      acc |= static_cast<std::uint64_t>(bytes[next++]) << filled;
      filled += 8;
    }
    out.push_back(static_cast<std::uint32_t>(acc & mask));
    acc >>= q;
    filled -= q;
  }
  return out;
}

namespace {

template <typename T>
double mean_squared_error(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw InvalidArgument("mse: length mismatch");
  }
  if (a.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

}  // namespace

double mse(std::span<const float> a, std::span<const float> b) {
  return mean_squared_error(a, b);
}

double mse(std::span<const double> a, std::span<const double> b) {
  return mean_squared_error(a, b);
}

QuantizedTensor compress(const Tensor& x, int q, Method method,
                         const CompressOptions& options, CompressInfo* info) {
  if (q == 32 || method == Method::kNaive || x.empty()) {
    return quantize(x, q);
  }
  const LaplaceParams estimate = estimate_laplace(x);
  LaplaceParams chosen = estimate;
  std::optional<SearchResult> search;
  double search_seconds = 0.0;
  if (method == Method::kPda && q <= options.search_max_bitwidth &&
      estimate.b > 0.0) {
    const auto t0 = std::chrono::steady_clock::now();
    search = directed_search(build_histogram(x, options.histogram_bins),
                             estimate, options.search_steps);
    search_seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    chosen = search->params;
  }
  if (info != nullptr) {
    info->estimate = estimate;
    info->search = search;
    info->search_seconds = search_seconds;
  }
  const ClipSpec clip{static_cast<float>(aciq_alpha(q, chosen.b)),
                      static_cast<float>(chosen.mu)};
  return quantize(x, q, clip);
}

}  // namespace qpipe::quant
