// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qpipe/pipeline.hpp"

namespace qpipe::app {

// --- CSV --------------------------------------------------------------------

/// Quotes a field when it holds a comma, quote, CR or LF (RFC 4180).
std::string csv_field(std::string_view s);

/// Fixed-point formatting used by every CSV so output is byte-stable.
std::string num(double v, int decimals = 6);

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}
  void row(const std::vector<std::string>& fields);

 private:
  std::ostream& out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column; throws if absent.
  std::size_t column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

// --- Run traces ---------------------------------------------------------------

/// Output rate of one stage over a window of consecutive microbatches.
/// Stages with an outgoing link use transmission records; the last stage
/// uses completion times.
struct WindowRow {
  std::size_t stage = 0;
  std::size_t index = 0;
  double start = 0.0;
  double end = 0.0;
  std::size_t microbatches = 0;
  double output_rate = 0.0;
};

std::vector<WindowRow> output_windows(const pipeline::RunTrace& trace,
                                      std::size_t window, int microbatch_size);

/// Writes output_rate.csv, bandwidth_bitwidth.csv, accuracy.csv,
/// controller_stage<k>.csv, events.csv and timing.json into `dir`.
void write_run_traces(const std::filesystem::path& dir,
                      const pipeline::RunTrace& trace,
                      const pipeline::PipelineConfig& cfg,
                      std::span<const int> reference, int microbatch_size);

// --- Summaries ----------------------------------------------------------------

struct PhaseRow {
  std::size_t phase = 0;
  std::size_t stage = 0;
  double start = 0.0;
  double end = 0.0;
  double mbps = 0.0;
  std::size_t windows = 0;
  std::optional<double> mean_rate;
  std::optional<double> last_rate;
  std::optional<int> steady_bitwidth;
  std::size_t completed = 0;
  std::optional<double> agreement;
};

struct Summary {
  std::vector<PhaseRow> phases;
  std::vector<std::vector<int>> timelines;  // collapsed bitwidths per link
  std::optional<double> search_share;  // directed-search wall share, if timed
};

/// Reads the traces in `dir` and reduces them to per-phase rows split at the
/// schedule change times. Throws Error on missing traces or no windows.
Summary summarize(const std::filesystem::path& dir);

void write_phases_csv(std::ostream& out, const Summary& s);
void print_summary(std::ostream& out, const Summary& s);

/// "32>16>2"
std::string join_timeline(std::span<const int> seq);

}  // namespace qpipe::app
