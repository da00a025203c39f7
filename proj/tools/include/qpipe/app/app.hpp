// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qpipe/app/report.hpp"
#include "qpipe/app/scenario.hpp"

namespace qpipe::app {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SweepPoint {
  double mbps = 0.0;
  double throughput = 0.0;
  double compute_bound = 0.0;
  double link_bound = 0.0;
  double predicted = 0.0;
  double rel_error = 0.0;
};

/// agreement[m][b] for sweep_methods[m] and sweep_bitwidths[b].
struct AgreementTable {
  std::vector<int> bitwidths;
  std::vector<quant::Method> methods;
  std::vector<std::vector<double>> agreement;

  double at(quant::Method m, int q) const;
};

struct Outcome {
  std::vector<Check> checks;
  std::optional<Summary> summary;         // run
  std::optional<pipeline::RunTrace> trace;  // run
  double agreement = 0.0;                 // run
  std::vector<SweepPoint> sweep;          // bandwidth sweep
  std::optional<AgreementTable> table;    // bitwidth sweep

  bool passed() const;
};

struct RunOptions {
  std::optional<std::uint64_t> seed;
  bool ladder = false;
};

/// Runs a scenario, writes its CSVs under `out_dir` and evaluates the
/// embedded expectations. Throws ConfigError for invalid scenarios.
Outcome run_scenario(Scenario scenario, const std::filesystem::path& out_dir,
                     const RunOptions& options = {});

/// One line per check: "PASS name: detail" / "FAIL name: detail".
void print_checks(std::ostream& out, const std::vector<Check>& checks);

/// Steady completion throughput (images/s) over the second half of a run.
double steady_throughput(const pipeline::RunTrace& trace);

}  // namespace qpipe::app
