// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "qpipe/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <string>

#include "qpipe/error.hpp"
#include "qpipe/wire.hpp"

namespace qpipe::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct PendingOutput {
  std::uint64_t id = 0;
  std::vector<std::uint8_t> frame;
  double charged_bytes = 0.0;
  int bitwidth = 32;
  int images = 0;
};

struct Inbound {
  std::uint64_t id = 0;
  Tensor activation;
};

struct StageState {
  bool computing = false;
  std::optional<PendingOutput> pending;  // computed but not yet on the link
  std::optional<Inbound> mailbox;        // delivered, waiting for compute
};

struct LinkState {
  std::unique_ptr<netsim::Channel> channel;
  std::optional<control::BitwidthController> controller;
  bool in_flight = false;  // a message occupies the link or the receiver's mailbox
};

// Event-driven execution of one run. Each stage holds at most one finished
// output and each link at most one undelivered-or-unconsumed message, so a
// slow stage or link back-pressures everything upstream of it.
class Simulation {
 public:
  Simulation(const model::ToyModel& model, std::span<const model::Shard> shards,
             std::span<const model::Microbatch> dataset,
             const PipelineConfig& cfg)
      : model_(model), shards_(shards), dataset_(dataset), cfg_(cfg) {
    stages_.resize(shards.size());
    links_.resize(cfg.links.size());
    for (std::size_t k = 0; k < links_.size(); ++k) {
      const LinkConfig& lc = cfg.links[k];
      links_[k].channel = std::make_unique<netsim::Channel>(
          lc.schedule, lc.burst, lc.propagation_delay);
      if (cfg.quant.mode == QuantMode::kAdaptive) {
        links_[k].controller.emplace(cfg.controller, cfg.quant.bitwidth);
      }
    }
    trace_.microbatches.resize(cfg.microbatches);
    for (std::uint64_t id = 0; id < cfg.microbatches; ++id) {
      auto& mb = trace_.microbatches[id];
      mb.id = id;
      mb.dataset_index = id % dataset.size();
      mb.stages.resize(shards.size());
      mb.links.resize(links_.size());
    }
  }

  RunTrace run() {
    const auto t0 = Clock::now();
    try_start(0);
    queue_.run();
    if (completed_ != cfg_.microbatches) {
      throw Error("simulation stalled after " + std::to_string(completed_) +
                  " of " + std::to_string(cfg_.microbatches) + " microbatches");
    }
    log_rate_changes();
    std::stable_sort(trace_.events.begin(), trace_.events.end(),
                     [](const auto& a, const auto& b) { return a.time < b.time; });
    for (const auto& link : links_) {
      trace_.decisions.push_back(link.controller ? link.controller->decisions()
                                                 : std::vector<control::Decision>{});
    }
    trace_.wall.total_seconds = seconds_since(t0);
    return std::move(trace_);
  }

 private:
  bool is_last(std::size_t k) const { return k + 1 == stages_.size(); }

  int link_bitwidth(std::size_t k) const {
    switch (cfg_.quant.mode) {
      case QuantMode::kOff:
        return 32;
      case QuantMode::kFixed:
        return cfg_.quant.bitwidth;
      case QuantMode::kAdaptive:
        return links_[k].controller->bitwidth();
    }
    return 32;
  }

  void try_start(std::size_t k) {
    StageState& st = stages_[k];
    if (st.computing || st.pending) {
      return;
    }
    std::uint64_t id = 0;
    Tensor input;
    if (k == 0) {
      if (next_source_ >= cfg_.microbatches) {
        return;
      }
      id = next_source_++;
      input = dataset_[trace_.microbatches[id].dataset_index].inputs;
    } else {
      if (!st.mailbox) {
        return;
      }
      id = st.mailbox->id;
      input = std::move(st.mailbox->activation);
      st.mailbox.reset();
      links_[k - 1].in_flight = false;
      try_submit(k - 1);
    }
    st.computing = true;
    const double now = queue_.now();
    trace_.microbatches[id].stages[k].compute_start = now;
    queue_.schedule(now + cfg_.compute_latency[k],
                    [this, k, id, in = std::move(input)]() mutable {
                      compute_done(k, id, std::move(in));
                    });
  }

  void compute_done(std::size_t k, std::uint64_t id, Tensor input) {
    const double now = queue_.now();
    auto& mb = trace_.microbatches[id];
    mb.stages[k].compute_end = now;

    auto t0 = Clock::now();
    Tensor out = model::forward_shard(model_, shards_[k], input);
    trace_.wall.compute_seconds += seconds_since(t0);

    StageState& st = stages_[k];
    st.computing = false;
    if (is_last(k)) {
      mb.completion = now;
      mb.predictions = model::argmax_rows(out);
      ++completed_;
      try_start(k);
      return;
    }

    const int q = link_bitwidth(k);
    t0 = Clock::now();
    quant::CompressInfo info;
    const quant::QuantizedTensor qt =
        cfg_.quant.mode == QuantMode::kOff
            ? quant::quantize(out, 32)
            : quant::compress(out, q, cfg_.quant.method, cfg_.quant.options, &info);
    PendingOutput p;
    p.id = id;
    p.bitwidth = qt.bitwidth;
    p.images = static_cast<int>(out.shape().front());
    p.frame = wire::encode_frame(static_cast<std::uint16_t>(k), id, qt);
    trace_.wall.compress_seconds += seconds_since(t0);
    trace_.wall.search_seconds += info.search_seconds;

    p.charged_bytes = static_cast<double>(p.frame.size());
    if (cfg_.wire_elems_per_image) {
      p.charged_bytes = static_cast<double>(wire::frame_size(
          2, *cfg_.wire_elems_per_image * static_cast<std::uint64_t>(p.images),
          qt.bitwidth));
    }
    st.pending = std::move(p);
    try_submit(k);
    try_start(k);
  }

  void try_submit(std::size_t k) {
    StageState& st = stages_[k];
    LinkState& link = links_[k];
    if (!st.pending || link.in_flight) {
      return;
    }
    PendingOutput p = std::move(*st.pending);
    st.pending.reset();
    link.in_flight = true;

    const double now = queue_.now();
    const netsim::SendRecord rec = link.channel->send(p.charged_bytes, now);
    const double delivered = rec.complete + link.channel->propagation_delay();

    LinkTransfer& lt = trace_.microbatches[p.id].links[k];
    lt.bitwidth = p.bitwidth;
    lt.bytes = p.charged_bytes;
    lt.frame_bytes = p.frame.size();
    lt.submit = rec.submit;
    lt.start = rec.start;
    lt.complete = rec.complete;
    lt.delivered = delivered;

    const int channel = static_cast<int>(k);
    trace_.events.push_back({rec.submit, channel, rec.bytes, "submit"});
    trace_.events.push_back({rec.start, channel, rec.bytes, "tx_start"});
    trace_.events.push_back({rec.complete, channel, rec.bytes, "tx_complete"});
    trace_.events.push_back({delivered, channel, rec.bytes, "deliver"});

    const control::TransferRecord tr{rec.start, rec.complete, rec.bytes,
                                     p.bitwidth, p.images};
    queue_.schedule(rec.complete, [this, k, tr]() {
      if (links_[k].controller) {
        links_[k].controller->observe(tr);
      }
    });
    queue_.schedule(delivered, [this, k, p = std::move(p)]() mutable {
      deliver(k, std::move(p));
    });
    try_start(k);
  }

  void deliver(std::size_t k, PendingOutput p) {
    const wire::Frame frame = wire::decode_frame(p.frame);
    stages_[k + 1].mailbox = Inbound{p.id, quant::dequantize(frame.tensor)};
    try_start(k + 1);
  }

  void log_rate_changes() {
    double end = 0.0;
    for (const auto& mb : trace_.microbatches) {
      end = std::max(end, mb.completion);
    }
    for (std::size_t k = 0; k < links_.size(); ++k) {
      for (const auto& pt : links_[k].channel->schedule().points()) {
        if (pt.start_sec <= end) {
          trace_.events.push_back(
              {pt.start_sec, static_cast<int>(k), pt.bytes_per_sec, "rate_change"});
        }
      }
    }
  }

  const model::ToyModel& model_;
  std::span<const model::Shard> shards_;
  std::span<const model::Microbatch> dataset_;
  const PipelineConfig& cfg_;

  netsim::EventQueue queue_;
  std::vector<StageState> stages_;
  std::vector<LinkState> links_;
  std::uint64_t next_source_ = 0;
  std::size_t completed_ = 0;
  RunTrace trace_;
};

}  // namespace

void validate(const model::ToyModel& model, std::span<const model::Shard> shards,
              std::span<const model::Microbatch> dataset,
              const PipelineConfig& cfg) {
  if (shards.empty()) {
    throw InvalidArgument("pipeline needs at least one shard");
  }
  std::size_t expect_lo = 0;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    if (shards[k].lo != expect_lo || shards[k].hi < shards[k].lo) {
      throw InvalidArgument("shards must cover the blocks contiguously in order");
    }
    expect_lo = shards[k].hi;
  }
  if (expect_lo != model.num_blocks()) {
    throw InvalidArgument("shards must cover every block exactly once");
  }
  if (dataset.empty()) {
    throw InvalidArgument("dataset is empty");
  }
  for (const auto& mb : dataset) {
    if (mb.inputs.shape().size() != 2 ||
        mb.inputs.shape()[1] != model.dims().input_dim) {
      throw InvalidArgument("dataset inputs do not match the model input width");
    }
  }
  if (cfg.compute_latency.size() != shards.size()) {
    throw InvalidArgument("need one compute latency per stage");
  }
  for (double c : cfg.compute_latency) {
    if (!(c >= 0.0)) {
      throw InvalidArgument("compute latency must be non-negative");
    }
  }
  if (cfg.links.size() + 1 != shards.size()) {
    throw InvalidArgument("need exactly one link between consecutive stages");
  }
  if (cfg.quant.mode != QuantMode::kOff &&
      !quant::is_supported_bitwidth(cfg.quant.bitwidth)) {
    throw InvalidArgument("unsupported bitwidth " +
                          std::to_string(cfg.quant.bitwidth));
  }
  if (cfg.quant.mode == QuantMode::kAdaptive) {
    control::validate(cfg.controller);
    const auto& allowed = cfg.controller.allowed_bitwidths;
    for (int q : allowed) {
      if (!quant::is_supported_bitwidth(q)) {
        throw InvalidArgument("controller may only choose supported bitwidths");
      }
    }
    if (std::find(allowed.begin(), allowed.end(), cfg.quant.bitwidth) ==
        allowed.end()) {
      throw InvalidArgument("initial bitwidth is not in the allowed set");
    }
  }
  if (cfg.quant.options.histogram_bins < 2 || cfg.quant.options.search_steps < 1) {
    throw InvalidArgument("histogram needs >= 2 bins and search >= 1 step");
  }
  if (cfg.controller.microbatch_size < 1) {
    throw InvalidArgument("microbatch size must be at least 1");
  }
  if (cfg.wire_elems_per_image && *cfg.wire_elems_per_image == 0) {
    throw InvalidArgument("wire_elems_per_image must be positive");
  }
}

RunTrace run_pipeline(const model::ToyModel& model,
                      std::span<const model::Shard> shards,
                      std::span<const model::Microbatch> dataset,
                      const PipelineConfig& cfg) {
  validate(model, shards, dataset, cfg);
  Simulation sim(model, shards, dataset, cfg);
  return sim.run();
}

std::vector<int> reference_predictions(const model::ToyModel& model,
                                       std::span<const model::Microbatch> dataset,
                                       std::size_t count) {
  if (dataset.empty()) {
    throw InvalidArgument("dataset is empty");
  }
  std::vector<std::vector<int>> per_item(dataset.size());
  std::vector<int> out;
  for (std::size_t i = 0; i < count; ++i) {
    auto& cached = per_item[i % dataset.size()];
    if (cached.empty()) {
      cached = model::argmax_rows(model.forward(dataset[i % dataset.size()].inputs));
    }
    out.insert(out.end(), cached.begin(), cached.end());
  }
  return out;
}

std::vector<int> predictions(const RunTrace& trace) {
  std::vector<int> out;
  for (const auto& mb : trace.microbatches) {
    out.insert(out.end(), mb.predictions.begin(), mb.predictions.end());
  }
  return out;
}

double top1_agreement(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) {
    throw InvalidArgument("prediction lists differ in length");
  }
  if (a.empty()) {
    throw InvalidArgument("no predictions to compare");
  }
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same += a[i] == b[i] ? 1 : 0;
  }
  return static_cast<double>(same) / static_cast<double>(a.size());
}

}  // namespace qpipe::pipeline
