// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qpipe/model.hpp"
#include "qpipe/pipeline.hpp"

namespace qpipe::app {

/// Raised for any scenario that cannot be parsed or would not simulate.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ScenarioKind {
  kRun,             // one pipeline run with full traces
  kBandwidthSweep,  // throughput at a series of constant link rates
  kBitwidthSweep,   // agreement table over bitwidths and methods
};

struct MethodFloor {
  quant::Method method = quant::Method::kPda;
  int bitwidth = 8;
  double min_agreement = 0.0;
};

struct MethodOrdering {
  int bitwidth = 2;
  std::vector<quant::Method> best_first;  // agreement must strictly decrease
};

struct Recovery {
  double fraction = 0.95;  // of the target rate
  std::size_t windows = 2;  // windows after the one containing the drop
};

/// Optional assertions embedded in a scenario. Empty members are skipped.
struct Expectations {
  std::vector<int> phase_bitwidths;  // steady bitwidth on link 0 per phase
  std::vector<std::vector<int>> bitwidth_sequences;  // any one must match
  std::vector<std::vector<int>> ladder_bitwidth_sequences;  // used with --ladder
  std::optional<double> min_agreement;
  std::optional<double> min_steady_rate;  // last window of every phase
  std::optional<Recovery> recovery;
  std::optional<double> bottleneck_tolerance;  // bandwidth sweep
  std::vector<MethodFloor> floors;        // bitwidth sweep
  std::vector<MethodOrdering> orderings;  // bitwidth sweep
  bool monotone_agreement = false;        // bitwidth sweep, per method
};

struct Scenario {
  std::string name;
  ScenarioKind kind = ScenarioKind::kRun;
  std::uint64_t model_seed = 1;
  model::ModelDims dims;
  model::DatasetConfig dataset;
  std::optional<std::size_t> stages;  // auto-partition into this many shards
  std::vector<model::Shard> shards;   // explicit partition
  pipeline::PipelineConfig config;

  std::vector<double> sweep_mbps;
  std::vector<int> sweep_bitwidths;
  std::vector<quant::Method> sweep_methods;

  Expectations expect;
};

ScenarioKind parse_kind(std::string_view s);
std::string_view to_string(ScenarioKind k);
pipeline::QuantMode parse_mode(std::string_view s);
std::string_view to_string(pipeline::QuantMode m);
quant::Method parse_method(std::string_view s);
std::string_view to_string(quant::Method m);

/// Parses a scenario document. Unknown keys are rejected.
Scenario parse_scenario(std::string_view json_text);
Scenario load_scenario(const std::filesystem::path& path);

/// Sets the model and dataset seeds.
void override_seed(Scenario& s, std::uint64_t seed);

/// Resolves the partition and checks the run configuration against the
/// model; throws ConfigError.
void finalize(Scenario& s, const model::ToyModel& model,
              std::span<const model::Microbatch> dataset);

}  // namespace qpipe::app
