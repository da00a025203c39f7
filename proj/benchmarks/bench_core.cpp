// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "qpipe/model.hpp"
#include "qpipe/quant.hpp"
#include "qpipe/rng.hpp"
#include "qpipe/wire.hpp"

namespace {

using namespace qpipe;

Tensor laplace_tensor(std::size_t n) {
  Xorshift64Star rng(7);
  std::vector<float> v(n);
  for (auto& x : v) {
    x = static_cast<float>(rng.laplace(0.0, 1.0));
  }
  return Tensor(std::move(v));
}

void BM_Quantize(benchmark::State& state) {
  const auto x = laplace_tensor(1 << 16);
  const int q = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(quant::quantize(x, q));
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_Quantize)->Arg(2)->Arg(8)->Arg(32);

void BM_Compress(benchmark::State& state) {
  const auto x = laplace_tensor(1 << 16);
  const auto method = static_cast<quant::Method>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(quant::compress(x, 2, method));
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_Compress)
    ->Arg(static_cast<int>(quant::Method::kNaive))
    ->Arg(static_cast<int>(quant::Method::kAciq))
    ->Arg(static_cast<int>(quant::Method::kPda));

void BM_Pack(benchmark::State& state) {
  const int q = static_cast<int>(state.range(0));
  Xorshift64Star rng(3);
  std::vector<std::uint32_t> codes(1 << 16);
  for (auto& c : codes) {
    c = static_cast<std::uint32_t>(rng.next() & ((1u << q) - 1u));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(quant::pack_codes(codes, q));
  }
  state.SetItemsProcessed(state.iterations() * codes.size());
}
BENCHMARK(BM_Pack)->Arg(2)->Arg(6)->Arg(16);

void BM_DirectedSearch(benchmark::State& state) {
  const auto x = laplace_tensor(1 << 16);
  const auto h = quant::build_histogram(x, static_cast<std::size_t>(state.range(0)));
  const auto p = quant::estimate_laplace(x);
  for (auto _ : state) {
    benchmark::DoNotOptimize(quant::directed_search(h, p));
  }
}
BENCHMARK(BM_DirectedSearch)->Arg(256)->Arg(2048);

void BM_EncodeDecode(benchmark::State& state) {
  const auto t = quant::quantize(laplace_tensor(64 * 128), 8);
  for (auto _ : state) {
    const auto bytes = wire::encode_frame(0, 1, t);
    benchmark::DoNotOptimize(wire::decode_frame(bytes));
  }
}
BENCHMARK(BM_EncodeDecode);

void BM_Forward(benchmark::State& state) {
  const auto m = model::ToyModel::build(1, {});
  model::DatasetConfig cfg;
  cfg.microbatches = 1;
  const auto data = model::make_dataset(cfg, {});
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.forward(data[0].inputs));
  }
}
BENCHMARK(BM_Forward);

}  // namespace

BENCHMARK_MAIN();
