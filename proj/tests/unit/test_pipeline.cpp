// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "qpipe/error.hpp"
#include "qpipe/pipeline.hpp"
#include "qpipe/wire.hpp"

namespace qpipe::pipeline {
namespace {

struct Fixture {
  model::ToyModel model = model::ToyModel::build(1, {});
  std::vector<model::Microbatch> dataset = [] {
    model::DatasetConfig cfg;
    cfg.microbatches = 8;
    return model::make_dataset(cfg, {});
  }();
  std::vector<model::Shard> shards(std::size_t n) const {
    const auto costs = model.block_costs();
    return model::partition_even(costs, n);
  }
};

PipelineConfig base_config(std::size_t stages, std::size_t microbatches) {
  PipelineConfig cfg;
  cfg.compute_latency.assign(stages, 0.1);
  cfg.links.resize(stages - 1);
  cfg.microbatches = microbatches;
  return cfg;
}

double steady_rate(const RunTrace& t) {
  const auto& mbs = t.microbatches;
  const std::size_t mid = mbs.size() / 2;
  double images = 0.0;
  for (std::size_t i = mid + 1; i < mbs.size(); ++i) {
    images += static_cast<double>(mbs[i].predictions.size());
  }
  return images / (mbs.back().completion - mbs[mid].completion);
}

TEST(Pipeline, LosslessMatchesWholeModel) {
  Fixture f;
  const auto shards = f.shards(2);
  const auto trace = run_pipeline(f.model, shards, f.dataset, base_config(2, 12));
  const auto got = predictions(trace);
  EXPECT_EQ(got, reference_predictions(f.model, f.dataset, 12));

  std::vector<int> oracle;
  for (std::size_t i = 0; i < 12; ++i) {
    const auto& mb = f.dataset[i % f.dataset.size()];
    const auto p = oracle::fp32_predictions(f.model, mb.inputs.values(),
                                            mb.inputs.shape()[0]);
    oracle.insert(oracle.end(), p.begin(), p.end());
  }
  EXPECT_EQ(got, oracle);
}

TEST(Pipeline, FixedThirtyTwoEqualsOff) {
  Fixture f;
  const auto shards = f.shards(3);
  auto off = base_config(3, 6);
  auto fixed = off;
  fixed.quant.mode = QuantMode::kFixed;
  fixed.quant.bitwidth = 32;
  const auto a = run_pipeline(f.model, shards, f.dataset, off);
  const auto b = run_pipeline(f.model, shards, f.dataset, fixed);
  EXPECT_EQ(predictions(a), predictions(b));
  for (std::size_t i = 0; i < a.microbatches.size(); ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_EQ(a.microbatches[i].links[k].frame_bytes,
                b.microbatches[i].links[k].frame_bytes);
      EXPECT_EQ(a.microbatches[i].links[k].bitwidth, 32);
    }
  }
}

TEST(Pipeline, FrameBytesFollowBitwidth) {
  Fixture f;
  const auto shards = f.shards(2);
  auto cfg = base_config(2, 2);
  cfg.quant.mode = QuantMode::kFixed;
  for (int q : quant::kBitwidths) {
    cfg.quant.bitwidth = q;
    const auto t = run_pipeline(f.model, shards, f.dataset, cfg);
    const auto& lt = t.microbatches[0].links[0];
    EXPECT_EQ(lt.frame_bytes, wire::frame_size(2, 64 * 128, q));
    EXPECT_EQ(lt.bytes, static_cast<double>(lt.frame_bytes));
  }
  cfg.wire_elems_per_image = 1000;
  cfg.quant.bitwidth = 8;
  const auto t = run_pipeline(f.model, shards, f.dataset, cfg);
  EXPECT_EQ(t.microbatches[0].links[0].bytes,
            static_cast<double>(wire::frame_size(2, 64 * 1000, 8)));
}

TEST(Pipeline, TimingInvariants) {
  Fixture f;
  const auto shards = f.shards(3);
  auto cfg = base_config(3, 20);
  cfg.compute_latency = {0.2, 0.05, 0.3};
  cfg.links[0].schedule = netsim::BandwidthSchedule::constant(2e5);
  cfg.links[1].propagation_delay = 0.01;
  const auto t = run_pipeline(f.model, shards, f.dataset, cfg);
  for (std::size_t i = 0; i < t.microbatches.size(); ++i) {
    const auto& mb = t.microbatches[i];
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(mb.stages[k].compute_end - mb.stages[k].compute_start,
                  cfg.compute_latency[k], 1e-12);
      if (i > 0) {
        EXPECT_GE(mb.stages[k].compute_start,
                  t.microbatches[i - 1].stages[k].compute_end);
      }
    }
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& lt = mb.links[k];
      EXPECT_GE(lt.submit, mb.stages[k].compute_end);
      EXPECT_GE(lt.start, lt.submit);
      EXPECT_GE(lt.complete, lt.start);
      EXPECT_NEAR(lt.delivered, lt.complete + cfg.links[k].propagation_delay, 1e-12);
      EXPECT_LE(lt.delivered, mb.stages[k + 1].compute_start);
    }
    if (i > 0) {
      EXPECT_GE(mb.completion, t.microbatches[i - 1].completion);
    }
  }
  EXPECT_TRUE(std::is_sorted(t.events.begin(), t.events.end(),
                             [](const auto& a, const auto& b) { return a.time < b.time; }));
}

TEST(Pipeline, BottleneckLaw) {
  Fixture f;
  const auto shards = f.shards(2);
  const double frame = static_cast<double>(wire::frame_size(2, 64 * 128, 32));
  for (double rate : {5e4, 2e5, 4e5, 1e6, 1e7}) {
    for (double c0 : {0.05, 0.2}) {
      auto cfg = base_config(2, 40);
      cfg.compute_latency = {c0, 0.1};
      cfg.links[0].schedule = netsim::BandwidthSchedule::constant(rate);
      const auto t = run_pipeline(f.model, shards, f.dataset, cfg);
      const double predicted = std::min({64.0 / c0, 64.0 / 0.1, 64.0 * rate / frame});
      EXPECT_NEAR(steady_rate(t), predicted, 0.05 * predicted)
          << "rate " << rate << " c0 " << c0;
    }
  }
}

TEST(Pipeline, Deterministic) {
  Fixture f;
  const auto shards = f.shards(2);
  auto cfg = base_config(2, 30);
  cfg.quant.mode = QuantMode::kAdaptive;
  cfg.controller.window = 5;
  cfg.links[0].schedule = netsim::BandwidthSchedule({{0.0, 1e6}, {1.0, 1e5}});
  const auto a = run_pipeline(f.model, shards, f.dataset, cfg);
  const auto b = run_pipeline(f.model, shards, f.dataset, cfg);
  ASSERT_EQ(a.events.size(), b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    EXPECT_EQ(a.events[i].time, b.events[i].time);
    EXPECT_EQ(a.events[i].type, b.events[i].type);
    EXPECT_EQ(a.events[i].bytes, b.events[i].bytes);
  }
  EXPECT_EQ(predictions(a), predictions(b));
}

TEST(Pipeline, AdaptiveReactsToBandwidthDrop) {
  Fixture f;
  const auto shards = f.shards(2);
  auto cfg = base_config(2, 60);
  cfg.compute_latency = {0.1, 0.1};
  cfg.quant.mode = QuantMode::kAdaptive;
  cfg.controller.window = 10;
  cfg.controller.target_rate = 500.0;
  // 32-bit frames are ~32.8 kB; at 1 MB/s they fit the 0.128 s budget,
  // at 2e5 B/s they need 8 bits.
  cfg.links[0].schedule = netsim::BandwidthSchedule({{0.0, 1e6}, {2.5, 2e5}});
  const auto t = run_pipeline(f.model, shards, f.dataset, cfg);
  const auto& d = t.decisions.at(0);
  ASSERT_GE(d.size(), 4u);
  std::size_t drop = 0;
  while (drop < d.size() && d[drop].window_end <= 2.5) {
    ++drop;
  }
  ASSERT_LT(drop + 1, d.size());
  EXPECT_EQ(d[0].q_new, 32);
  EXPECT_LT(std::min(d[drop].q_new, d[drop + 1].q_new), 32);
}

TEST(Pipeline, ValidationErrors) {
  Fixture f;
  const auto shards = f.shards(2);
  auto cfg = base_config(2, 4);
  cfg.compute_latency = {0.1};
  EXPECT_THROW(run_pipeline(f.model, shards, f.dataset, cfg), InvalidArgument);
  cfg = base_config(2, 4);
  cfg.links.clear();
  EXPECT_THROW(run_pipeline(f.model, shards, f.dataset, cfg), InvalidArgument);
  cfg = base_config(2, 4);
  cfg.quant.mode = QuantMode::kFixed;
  cfg.quant.bitwidth = 5;
  EXPECT_THROW(run_pipeline(f.model, shards, f.dataset, cfg), InvalidArgument);
  cfg = base_config(2, 4);
  cfg.quant.mode = QuantMode::kAdaptive;
  cfg.quant.bitwidth = 8;
  cfg.controller.allowed_bitwidths = {2, 4, 32};
  EXPECT_THROW(run_pipeline(f.model, shards, f.dataset, cfg), InvalidArgument);
  const std::vector<model::Shard> gap = {{0, 0, 3}, {1, 4, 8}};
  EXPECT_THROW(run_pipeline(f.model, gap, f.dataset, base_config(2, 4)),
               InvalidArgument);
  EXPECT_THROW(run_pipeline(f.model, shards, {}, base_config(2, 4)), InvalidArgument);
}

TEST(Agreement, Examples) {
  const std::vector<int> a = {1, 2, 3, 4};
  const std::vector<int> b = {1, 2, 0, 4};
  EXPECT_EQ(top1_agreement(a, a), 1.0);
  EXPECT_EQ(top1_agreement(a, b), 0.75);
  const std::vector<int> c = {1};
  EXPECT_THROW(top1_agreement(a, c), InvalidArgument);
}

TEST(Agreement, OrderingOnToyModel) {
  Fixture f;
  model::DatasetConfig dcfg;
  dcfg.microbatches = 16;
  const auto data = model::make_dataset(dcfg, {});
  const auto shards = f.shards(2);
  const auto ref = reference_predictions(f.model, data, data.size());
  auto agreement = [&](quant::Method m, int q) {
    auto cfg = base_config(2, data.size());
    cfg.quant.mode = QuantMode::kFixed;
    cfg.quant.method = m;
    cfg.quant.bitwidth = q;
    return top1_agreement(predictions(run_pipeline(f.model, shards, data, cfg)), ref);
  };
  double prev = 1.0;
  for (int q : {32, 16, 8, 6, 4, 2}) {
    const double a = agreement(quant::Method::kPda, q);
    EXPECT_LE(a, prev) << "q=" << q;
    prev = a;
  }
  EXPECT_EQ(agreement(quant::Method::kPda, 32), 1.0);
  EXPECT_GT(agreement(quant::Method::kPda, 2), agreement(quant::Method::kNaive, 2));
}

}  // namespace
}  // namespace qpipe::pipeline
