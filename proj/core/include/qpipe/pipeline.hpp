// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qpipe/controller.hpp"
#include "qpipe/model.hpp"
#include "qpipe/netsim.hpp"
#include "qpipe/quant.hpp"

namespace qpipe::pipeline {

enum class QuantMode {
  kOff,       // float passthrough on every link
  kFixed,     // one bitwidth for the whole run
  kAdaptive,  // per-link windowed controller
};

struct QuantConfig {
  QuantMode mode = QuantMode::kOff;
  quant::Method method = quant::Method::kPda;
  /// Fixed bitwidth, or the starting bitwidth in adaptive mode.
  int bitwidth = 32;
  quant::CompressOptions options;
};

struct LinkConfig {
  netsim::BandwidthSchedule schedule = netsim::BandwidthSchedule::constant(
      netsim::mbps_to_bytes_per_sec(1000.0));
  double burst = netsim::kDefaultBurstBytes;
  double propagation_delay = 0.0;
};

struct PipelineConfig {
  /// Virtual seconds each stage spends per microbatch; one entry per stage.
  std::vector<double> compute_latency;
  /// One link between each pair of consecutive stages.
  std::vector<LinkConfig> links;
  control::ControllerConfig controller;
  QuantConfig quant;
  /// Microbatches pushed through the pipeline; the dataset is cycled.
  std::size_t microbatches = 0;
  /// When set, links are charged for a frame carrying this many activation
  /// values per image instead of the toy model's real frame. Quantization
  /// and accuracy still use the real activations.
  std::optional<std::uint64_t> wire_elems_per_image;
};

struct StageTiming {
  double compute_start = 0.0;
  double compute_end = 0.0;
};

struct LinkTransfer {
  int bitwidth = 32;
  double bytes = 0.0;  // bytes charged to the link
  std::size_t frame_bytes = 0;  // bytes of the encoded frame
  double submit = 0.0;
  double start = 0.0;
  double complete = 0.0;
  double delivered = 0.0;
};

struct MicrobatchTrace {
  std::uint64_t id = 0;
  std::size_t dataset_index = 0;
  std::vector<StageTiming> stages;
  std::vector<LinkTransfer> links;
  double completion = 0.0;
  std::vector<int> predictions;
};

/// Host wall-clock spent in each kind of work. Not deterministic; never
/// written to trace CSVs.
struct WallTiming {
  double compute_seconds = 0.0;
  double compress_seconds = 0.0;
  double search_seconds = 0.0;
  double total_seconds = 0.0;
};

struct RunTrace {
  std::vector<MicrobatchTrace> microbatches;  // indexed by microbatch id
  std::vector<std::vector<control::Decision>> decisions;  // per link
  std::vector<netsim::TraceEvent> events;  // time-ordered
  WallTiming wall;
};

/// Throws InvalidArgument if the configuration cannot be simulated.
void validate(const model::ToyModel& model, std::span<const model::Shard> shards,
              std::span<const model::Microbatch> dataset,
              const PipelineConfig& cfg);

/// Drives the discrete-event simulation of the whole pipeline.
RunTrace run_pipeline(const model::ToyModel& model,
                      std::span<const model::Shard> shards,
                      std::span<const model::Microbatch> dataset,
                      const PipelineConfig& cfg);

/// Predictions of the unpartitioned float model for the first `count`
/// microbatches of the cycled dataset, concatenated.
std::vector<int> reference_predictions(const model::ToyModel& model,
                                       std::span<const model::Microbatch> dataset,
                                       std::size_t count);

/// Concatenated final predictions of a run in microbatch order.
std::vector<int> predictions(const RunTrace& trace);

/// Fraction of positions where both prediction vectors agree.
double top1_agreement(std::span<const int> a, std::span<const int> b);

}  // namespace qpipe::pipeline
