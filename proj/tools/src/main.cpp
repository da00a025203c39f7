// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "qpipe/app/app.hpp"
#include "qpipe/error.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitAssertion = 1;
constexpr int kExitInvalid = 2;

int cmd_run(const std::string& scenario_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed, bool ladder) {
  qpipe::app::RunOptions options;
  options.seed = seed;
  options.ladder = ladder;
  const auto scenario = qpipe::app::load_scenario(scenario_path);
  const auto outcome = qpipe::app::run_scenario(scenario, out_dir, options);
  if (outcome.summary) {
    qpipe::app::print_summary(std::cout, *outcome.summary);
  }
  qpipe::app::print_checks(std::cout, outcome.checks);
  return outcome.passed() ? kExitPass : kExitAssertion;
}

int cmd_summarize(const std::string& dir) {
  const auto summary = qpipe::app::summarize(dir);
  qpipe::app::print_summary(std::cout, summary);
  qpipe::app::write_phases_csv(std::cout, summary);
  return kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qpipe: pipelined inference simulator with adaptive activation quantization"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  bool ladder = false;
  auto* run = app.add_subcommand("run", "run a scenario and write its traces");
  run->add_option("scenario", scenario_path, "scenario JSON file")->required();
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--seed", seed, "override the model and dataset seeds");
  run->add_flag("--ladder", ladder, "map bitwidth updates through the full allowed set");

  std::string trace_dir;
  auto* summarize =
      app.add_subcommand("summarize", "reduce a run's traces to per-phase rows");
  summarize->add_option("dir", trace_dir, "trace directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitPass : kExitInvalid;
  }

  try {
    if (*run) {
      return cmd_run(scenario_path, out_dir, seed, ladder);
    }
    return cmd_summarize(trace_dir);
  } catch (const qpipe::app::ConfigError& e) {
    std::cerr << "qpipe: invalid configuration: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "qpipe: " << e.what() << '\n';
    return kExitInvalid;
  }
}
