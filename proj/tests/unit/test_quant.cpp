// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include "oracles.hpp"
#include "qpipe/error.hpp"
#include "qpipe/quant.hpp"
#include "qpipe/rng.hpp"

namespace qpipe::quant {
namespace {

Tensor tensor_of(std::vector<float> v) { return Tensor(std::move(v)); }

Tensor laplace_tensor(std::uint64_t seed, std::size_t n, double mu, double b) {
  return tensor_of(oracle::laplace_samples(seed, n, mu, b));
}

// Heavy-tailed mixture whose sum|x|/N scale misses the peak.
Tensor mixture_tensor(std::uint64_t seed, std::size_t n) {
  Xorshift64Star rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) {
    const double b = rng.uniform() < 0.5 ? 0.5 : 3.0;
    x = static_cast<float>(rng.laplace(0.0, b));
  }
  return tensor_of(std::move(v));
}

template <typename Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

// --- statistics -------------------------------------------------------------

TEST(TensorStats, Example) {
  const auto s = tensor_stats(tensor_of({1, -1, 2, -2}));
  EXPECT_EQ(s.min, -2.0f);
  EXPECT_EQ(s.max, 2.0f);
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_EQ(s.mean_abs, 1.5);
  EXPECT_EQ(s.n, 4u);
}

TEST(TensorStats, Zeros) {
  const auto s = tensor_stats(tensor_of({0, 0, 0}));
  EXPECT_EQ(s.min, 0.0f);
  EXPECT_EQ(s.max, 0.0f);
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_EQ(s.mean_abs, 0.0);
}

TEST(TensorStats, EmptyIsAnError) {
  EXPECT_EQ(error_of([] { tensor_stats(Tensor()); }), "empty input");
  EXPECT_THROW(estimate_laplace(Tensor()), InvalidArgument);
}

TEST(TensorValidation, RejectsNonFinite) {
  EXPECT_THROW(tensor_of({1.0f, std::numeric_limits<float>::quiet_NaN()}),
               InvalidArgument);
  EXPECT_THROW(tensor_of({std::numeric_limits<float>::infinity()}), InvalidArgument);
  EXPECT_THROW(Tensor({1.0f, 2.0f}, Shape{3}), InvalidArgument);
  EXPECT_THROW(Tensor({}, Shape{0}), InvalidArgument);
}

TEST(EstimateLaplace, Examples) {
  const auto p = estimate_laplace(tensor_of({1, -1, 2, -2}));
  EXPECT_EQ(p.mu, 0.0);
  EXPECT_EQ(p.b, 1.5);
  const auto c = estimate_laplace(tensor_of({2.5f, 2.5f, 2.5f, 2.5f}));
  EXPECT_EQ(c.mu, 2.5);
  EXPECT_EQ(c.b, 2.5);
}

TEST(EstimateLaplace, SampledScale) {
  const auto p = estimate_laplace(laplace_tensor(7, 100'000, 0.0, 1.0));
  EXPECT_NEAR(p.b, 1.0, 0.02);
  EXPECT_NEAR(p.mu, 0.0, 0.02);
}

// --- clipping table -----------------------------------------------------------

TEST(AciqAlpha, MatchesLambertOracle) {
  for (int q : kClipBitwidths) {
    EXPECT_NEAR(aciq_multiplier(q), oracle::clip_multiplier(q),
                1e-9 * oracle::clip_multiplier(q))
        << "q=" << q;
  }
}

TEST(AciqAlpha, Examples) {
  EXPECT_NEAR(aciq_alpha(2, 1.0), 2.83, 0.01);
  EXPECT_NEAR(aciq_alpha(4, 1.0), 5.03, 0.01);
  EXPECT_EQ(aciq_alpha(4, 0.0), 0.0);
}

TEST(AciqAlpha, UnsupportedBitwidths) {
  EXPECT_THROW(aciq_alpha(32, 1.0), InvalidArgument);
  EXPECT_THROW(aciq_alpha(3, 1.0), InvalidArgument);
  EXPECT_THROW(aciq_alpha_oracle(32, 1.0), InvalidArgument);
  EXPECT_THROW(aciq_alpha(4, -1.0), InvalidArgument);
}

TEST(AciqAlphaOracle, Examples) {
  EXPECT_NEAR(aciq_alpha_oracle(8, 1.0), 9.89, 0.01);
  EXPECT_NEAR(aciq_alpha_oracle(8, 1.0), oracle::clip_multiplier(8), 1e-6);
  EXPECT_NEAR(aciq_alpha_oracle(2, 2.0), 2.0 * aciq_alpha_oracle(2, 1.0), 1e-9);
  EXPECT_NEAR(aciq_alpha_oracle(6, 1.0), aciq_alpha(6, 1.0), 1e-3 * aciq_alpha(6, 1.0));
}

TEST(AciqAlphaOracle, MinimizesModel) {
  for (int q : kClipBitwidths) {
    const double a = aciq_alpha_oracle(q, 1.0);
    const double e = laplace_clip_mse(q, 1.0, a);
    EXPECT_LE(e, laplace_clip_mse(q, 1.0, a * 1.01));
    EXPECT_LE(e, laplace_clip_mse(q, 1.0, a * 0.99));
  }
}

TEST(AciqAlpha, LinearInScale) {
  for (int q : kClipBitwidths) {
    for (double c : {0.01, 0.5, 3.0, 1000.0}) {
      EXPECT_NEAR(aciq_alpha(q, c * 1.7), c * aciq_alpha(q, 1.7),
                  1e-12 * c * aciq_alpha(q, 1.7));
    }
  }
}

// --- histograms ---------------------------------------------------------------

TEST(BuildHistogram, UniformGrid) {
  const auto h = build_histogram(
      tensor_of({0.0f, 0.15f, 0.25f, 0.35f, 0.45f, 0.55f, 0.65f, 0.75f, 0.85f, 1.0f}),
      10);
  ASSERT_EQ(h.bins(), 10u);
  for (double d : h.densities) {
    EXPECT_NEAR(d, 1.0, 1e-6);
  }
}

TEST(BuildHistogram, ConstantTensor) {
  const auto h = build_histogram(tensor_of({3.0f, 3.0f, 3.0f}), 16);
  EXPECT_LT(h.lo, 3.0);
  EXPECT_GT(h.hi, 3.0);
  std::size_t occupied = 0;
  for (double d : h.densities) {
    if (d > 0.0) {
      ++occupied;
      EXPECT_NEAR(d, 1.0 / h.bin_width(), 1e-9);
    }
  }
  EXPECT_EQ(occupied, 1u);
}

TEST(BuildHistogram, NormalizedAndValidated) {
  const auto x = laplace_tensor(3, 20'000, 0.0, 1.0);
  const auto h = build_histogram(x, 2048);
  const double mass =
      std::accumulate(h.densities.begin(), h.densities.end(), 0.0) * h.bin_width();
  EXPECT_NEAR(mass, 1.0, 1e-6);
  EXPECT_THROW(build_histogram(Tensor(), 8), InvalidArgument);
  EXPECT_THROW(build_histogram(x, 1), InvalidArgument);
}

TEST(BuildHistogram, MatchesOracleBinning) {
  const auto x = laplace_tensor(4, 5'000, 0.3, 0.8);
  const auto h = build_histogram(x, 257);
  const auto o = oracle::bin_densities(x.values(), 257);
  ASSERT_EQ(h.densities.size(), o.densities.size());
  for (std::size_t k = 0; k < o.densities.size(); ++k) {
    EXPECT_NEAR(h.densities[k], o.densities[k], 1e-9) << k;
  }
}

TEST(BuildHistogram, LaplacePeak) {
  const auto h = build_histogram(laplace_tensor(5, 200'000, 0.0, 1.0), 2048);
  const double peak = *std::max_element(h.densities.begin(), h.densities.end());
  EXPECT_NEAR(peak, 0.5, 0.05);
}

TEST(LaplaceHistogram, Examples) {
  Histogram grid{-8.0, 8.0, std::vector<double>(1600, 0.0)};
  const auto d = laplace_histogram({0.0, 1.0}, grid);
  const double mass =
      std::accumulate(d.densities.begin(), d.densities.end(), 0.0) * d.bin_width();
  EXPECT_GE(mass, 0.999);
  EXPECT_LE(mass, 1.0 + 1e-12);
  EXPECT_NEAR(*std::max_element(d.densities.begin(), d.densities.end()), 0.5, 0.01);

  const auto s = laplace_histogram({3.0, 1.0}, grid);
  const auto k = static_cast<std::size_t>(
      std::max_element(s.densities.begin(), s.densities.end()) - s.densities.begin());
  EXPECT_LE(s.edge(k), 3.0);
  EXPECT_GE(s.edge(k + 1), 3.0);

  const auto o = oracle::laplace_densities(0.0, 1.0, -8.0, 8.0, 1600);
  for (std::size_t i = 0; i < o.size(); i += 97) {
    EXPECT_NEAR(d.densities[i], o[i], 1e-9);
  }
}

TEST(LaplaceHistogram, DegenerateScale) {
  Histogram grid{-1.0, 1.0, std::vector<double>(4, 0.0)};
  EXPECT_EQ(error_of([&] { laplace_histogram({0.0, 0.0}, grid); }),
            "degenerate distribution");
}

// --- directed search ----------------------------------------------------------

TEST(DirectedSearch, MatchedDistributionKeepsInitialScale) {
  Histogram grid{-10.0, 10.0, std::vector<double>(2048, 0.0)};
  const auto real = laplace_histogram({0.0, 1.0}, grid);
  const auto r = directed_search(real, {0.0, 1.0});
  EXPECT_FALSE(r.improved);
  EXPECT_EQ(r.params.b, 1.0);
  EXPECT_EQ(r.mse_best, r.mse_initial);
}

TEST(DirectedSearch, BoundaryFromPeak) {
  Histogram h{0.0, 4.0, {0.25, 0.25}};
  const auto r = directed_search(h, {2.0, 1.0}, 10);
  EXPECT_EQ(r.b_boundary, 2.0);
}

TEST(DirectedSearch, EmptyHistogram) {
  Histogram h{0.0, 1.0, {0.0, 0.0, 0.0}};
  EXPECT_EQ(error_of([&] { directed_search(h, {0.0, 1.0}); }), "empty histogram");
  Histogram ok{0.0, 1.0, {1.0, 1.0}};
  EXPECT_THROW(directed_search(ok, {0.0, 1.0}, 0), InvalidArgument);
}

TEST(DirectedSearch, MixtureImprovesAndMatchesGrid) {
  const auto x = mixture_tensor(2024, 100'000);
  const auto h = build_histogram(x, 2048);
  const auto p0 = estimate_laplace(x);
  const auto r = directed_search(h, p0);
  ASSERT_TRUE(r.improved);
  EXPECT_NE(r.params.b, p0.b);
  EXPECT_LE(r.mse_best, 0.7 * r.mse_initial);

  const auto o = oracle::bin_densities(x.values(), 2048);
  const auto grid = oracle::grid_search_scale(
      o, p0.mu, std::min(r.b_initial, r.b_boundary),
      std::max(r.b_initial, r.b_boundary), 10'000);
  EXPECT_NEAR(r.params.b, grid.b, 0.02 * grid.b);
}

TEST(DirectedSearch, NeverRegressesAndStaysInBounds) {
  Xorshift64Star pick(99);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const std::size_t n = 64 + pick.next() % 512;
    std::vector<float> v(n);
    const double b1 = 0.1 + 3.0 * pick.uniform();
    const double b2 = 0.1 + 3.0 * pick.uniform();
    const double mu = pick.uniform() * 2.0 - 1.0;
    Xorshift64Star rng(seed);
    for (auto& x : v) {
      x = static_cast<float>(rng.laplace(mu, rng.uniform() < 0.5 ? b1 : b2));
    }
    const Tensor t = tensor_of(std::move(v));
    const auto h = build_histogram(t, 256);
    const auto p0 = estimate_laplace(t);
    const auto r = directed_search(h, p0, 50);
    ASSERT_LE(r.mse_best, r.mse_initial) << seed;
    const double d = mse(h.densities, laplace_histogram(r.params, h).densities);
    ASSERT_LE(d, r.mse_initial) << seed;
    ASSERT_GE(r.params.b, std::min(r.b_initial, r.b_boundary)) << seed;
    ASSERT_LE(r.params.b, std::max(r.b_initial, r.b_boundary)) << seed;
  }
}

// --- quantize / dequantize ----------------------------------------------------

TEST(Quantize, TwoBitExample) {
  const auto t = quantize(tensor_of({-1, 0, 1}), 2);
  EXPECT_EQ(t.codes, (std::vector<std::uint32_t>{0, 2, 3}));
  EXPECT_EQ(t.offset, -1.0f);
  EXPECT_FLOAT_EQ(t.step, 2.0f / 3.0f);
  EXPECT_FALSE(t.clip.has_value());
}

TEST(Quantize, PassthroughIsBitExact) {
  std::vector<float> v = {0.0f, -0.0f, 1e-40f, -3.5f, 1e30f,
                          std::numeric_limits<float>::denorm_min()};
  const auto x = tensor_of(v);
  const auto t = quantize(x, 32);
  const auto y = dequantize(t);
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint32_t>(y.values()[i]),
              std::bit_cast<std::uint32_t>(v[i]));
  }
}

TEST(Quantize, DegenerateRange) {
  const auto t = quantize(tensor_of({4.0f, 4.0f}), 4);
  EXPECT_EQ(t.codes, (std::vector<std::uint32_t>{0, 0}));
  EXPECT_EQ(t.step, 0.0f);
  EXPECT_EQ(dequantize(t).data(), (std::vector<float>{4.0f, 4.0f}));
}

TEST(Quantize, RejectsUnsupportedBitwidth) {
  EXPECT_THROW(quantize(tensor_of({1.0f}), 3), InvalidArgument);
  EXPECT_THROW(quantize(tensor_of({1.0f}), 4, ClipSpec{-1.0f, 0.0f}), InvalidArgument);
}

TEST(Dequantize, Examples) {
  QuantizedTensor t;
  t.codes = {0, 2, 3};
  t.bitwidth = 2;
  t.offset = -1.0f;
  t.step = 2.0f / 3.0f;
  t.shape = {3};
  const auto y = dequantize(t);
  EXPECT_FLOAT_EQ(y.values()[0], -1.0f);
  EXPECT_FLOAT_EQ(y.values()[1], 1.0f / 3.0f);
  EXPECT_FLOAT_EQ(y.values()[2], 1.0f);

  t.codes = {0, 0, 0};
  EXPECT_EQ(dequantize(t).data(), (std::vector<float>(3, -1.0f)));
}

// Half a step plus the float32 rounding of offset, step and the result.
double round_trip_bound(const QuantizedTensor& t, float x) {
  const double top = std::exp2(t.bitwidth) - 1.0;
  const double scale = std::fabs(t.offset) + std::fabs(t.step) * top + std::fabs(x);
  return 0.5 * t.step + 4.0 * std::numeric_limits<float>::epsilon() * scale;
}

TEST(Quantize, RoundTripWithinHalfStep) {
  Xorshift64Star pick(1234);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const std::size_t n = 1 + pick.next() % 300;
    const double b = 0.01 + 10.0 * pick.uniform();
    const double mu = 20.0 * pick.uniform() - 10.0;
    const auto x = laplace_tensor(seed, n, mu, b);
    const bool clipped = seed % 2 == 1;
    for (int q : kBitwidths) {
      if (q == 32) {
        ASSERT_EQ(dequantize(quantize(x, q)), x);
        continue;
      }
      std::optional<ClipSpec> clip;
      if (clipped) {
        clip = ClipSpec{static_cast<float>(aciq_alpha(q, b)), static_cast<float>(mu)};
      }
      const auto t = quantize(x, q, clip);
      const auto y = dequantize(t);
      for (std::size_t i = 0; i < n; ++i) {
        ASSERT_LT(t.codes[i], 1u << q);
        const float v = x.values()[i];
        if (clip && (v < clip->center - clip->alpha || v > clip->center + clip->alpha)) {
          continue;
        }
        ASSERT_LE(std::fabs(static_cast<double>(y.values()[i]) - v),
                  round_trip_bound(t, v))
            << "seed " << seed << " q " << q << " i " << i;
      }
    }
  }
}

TEST(Quantize, ClippingBeatsNaiveUnderOutliers) {
  auto v = oracle::laplace_samples(77, 4096, 0.0, 1.0);
  const std::size_t inliers = v.size();
  v.push_back(40.0f);
  const auto x = tensor_of(v);
  for (int q : {2, 4, 6, 8}) {
    const auto naive = dequantize(quantize(x, q));
    const auto clip = ClipSpec{static_cast<float>(aciq_alpha(q, 1.0)), 0.0f};
    const auto clipped = dequantize(quantize(x, q, clip));
    const std::span<const float> orig = x.values().first(inliers);
    const double e_naive = mse(orig, naive.values().first(inliers));
    const double e_clip = mse(orig, clipped.values().first(inliers));
    EXPECT_LT(e_clip, e_naive) << "q=" << q;
  }
}

// --- packing ------------------------------------------------------------------

TEST(Pack, Examples) {
  const std::vector<std::uint32_t> c = {0, 1, 2, 3};
  EXPECT_EQ(pack_codes(c, 2), (std::vector<std::uint8_t>{0xE4}));
  const std::vector<std::uint32_t> c6 = {63};
  EXPECT_EQ(pack_codes(c6, 6), (std::vector<std::uint8_t>{0x3F}));
  const std::vector<std::uint32_t> c8(1000, 7);
  EXPECT_EQ(pack_codes(c8, 8).size(), 1000u);
  EXPECT_EQ(packed_size(1000, 8) * 4, packed_size(1000, 32));
}

TEST(Pack, Overflow) {
  const std::vector<std::uint32_t> c = {4};
  EXPECT_EQ(error_of([&] { pack_codes(c, 2); }), "code overflow");
}

TEST(Pack, BijectiveForAllLengths) {
  Xorshift64Star rng(5);
  for (int q : kClipBitwidths) {
    for (std::size_t n = 0; n <= 1000; ++n) {
      std::vector<std::uint32_t> c(n);
      for (auto& v : c) {
        v = static_cast<std::uint32_t>(rng.next() & ((1u << q) - 1u));
      }
      const auto bytes = pack_codes(c, q);
      ASSERT_EQ(bytes.size(), (n * q + 7) / 8);
      ASSERT_EQ(unpack_codes(bytes, q, n), c) << "q=" << q << " n=" << n;
    }
  }
}

TEST(Pack, PaddingBitsAreZero) {
  const std::vector<std::uint32_t> c = {63, 63};
  const auto bytes = pack_codes(c, 6);
  ASSERT_EQ(bytes.size(), 2u);
  EXPECT_EQ(bytes[1] & 0xF0, 0);
}

// --- mse -----------------------------------------------------------------------

TEST(Mse, Examples) {
  const std::vector<float> a = {0, 0};
  const std::vector<float> b = {1, 1};
  EXPECT_EQ(mse(a, a), 0.0);
  EXPECT_EQ(mse(std::span<const float>(a), std::span<const float>(b)), 1.0);
  const std::vector<float> c = {1};
  EXPECT_THROW(mse(std::span<const float>(a), std::span<const float>(c)),
               InvalidArgument);
}

TEST(Mse, MatchesTwoPassOracle) {
  const auto x = oracle::laplace_samples(8, 10'000, 1.0, 2.0);
  const auto y = oracle::laplace_samples(9, 10'000, -1.0, 0.5);
  EXPECT_NEAR(mse(x, y), oracle::two_pass_mse(x, y), 1e-9 * oracle::two_pass_mse(x, y));
}

// --- compress -------------------------------------------------------------------

TEST(Compress, MethodsAndSearchGate) {
  const auto x = mixture_tensor(3, 4096);
  CompressInfo info;
  const auto naive = compress(x, 2, Method::kNaive, {}, &info);
  EXPECT_FALSE(naive.clip.has_value());

  const auto aciq = compress(x, 2, Method::kAciq, {}, &info);
  ASSERT_TRUE(aciq.clip.has_value());
  EXPECT_FALSE(info.search.has_value());
  EXPECT_FLOAT_EQ(aciq.clip->alpha,
                  static_cast<float>(aciq_alpha(2, estimate_laplace(x).b)));

  const auto pda = compress(x, 2, Method::kPda, {}, &info);
  ASSERT_TRUE(info.search.has_value());
  EXPECT_FLOAT_EQ(pda.clip->alpha,
                  static_cast<float>(aciq_alpha(2, info.search->params.b)));

  compress(x, 8, Method::kPda, {}, &info);
  EXPECT_FALSE(info.search.has_value());

  EXPECT_EQ(compress(x, 32, Method::kPda), quantize(x, 32));
}

}  // namespace
}  // namespace qpipe::quant
