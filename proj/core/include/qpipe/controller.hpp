// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qpipe::control {

inline constexpr std::size_t kDefaultWindow = 50;

struct ControllerConfig {
  double target_rate = 100.0;  // images per second
  int microbatch_size = 64;
  double change_threshold = 0.10;
  std::vector<int> allowed_bitwidths = {2, 4, 6, 8, 16, 32};
  /// Map the continuous bitwidth 32/ratio onto the allowed set instead of
  /// rounding the ratio up to a power of two.
  bool ladder = false;
  std::size_t window = kDefaultWindow;
};

/// Throws InvalidArgument when the configuration is out of range.
void validate(const ControllerConfig& cfg);

/// One transmitted microbatch as seen by the sending stage.
struct TransferRecord {
  double start = 0.0;     // first byte on the wire
  double complete = 0.0;  // last byte on the wire
  double bytes = 0.0;
  int bitwidth = 32;
  int images = 0;
};

struct WindowMetrics {
  std::size_t window_len = 0;
  double avg_bandwidth = 0.0;       // bytes/s while transmitting
  double avg_output_rate = 0.0;     // images/s
  double avg_quantized_size = 0.0;  // bytes per microbatch at `bitwidth`
  int bitwidth = 32;
};

/// Averages a window of transfers. `window_start` is the completion time of
/// the last transfer of the previous window (0 for the first window).
/// Sizes of transfers sent at an older bitwidth are rescaled to `bitwidth`.
WindowMetrics summarize_window(std::span<const TransferRecord> records,
                               double window_start, int bitwidth);

/// True iff the relative bandwidth change exceeds `threshold`.
bool detect_change(const WindowMetrics& prev, const WindowMetrics& cur,
                   double threshold);

/// Bitwidth that lets a microbatch of the unquantized size V*32/q drain in
/// S/R seconds at bandwidth B: 32 / 2^ceil(log2(ratio)), clamped to [2, 32]
/// and snapped to the allowed set.
int next_bitwidth(int q, double quantized_size, int microbatch_size,
                  double target_rate, double bandwidth,
                  const ControllerConfig& cfg);

struct Decision {
  std::size_t window_index = 0;
  double window_start = 0.0;
  double window_end = 0.0;
  WindowMetrics metrics;
  int q_old = 32;
  int q_new = 32;
  std::string reason;  // "none", "bandwidth_change", "rate_below_target", or both joined by '+'
};

/// Windowed adaptive-bitwidth policy for one sending stage.
class BitwidthController {
 public:
  explicit BitwidthController(ControllerConfig cfg, int initial_bitwidth = 32);

  /// Feeds one completed transfer. When it closes a window, evaluates the
  /// policy, logs a Decision and returns the new bitwidth if it changed.
  std::optional<int> observe(const TransferRecord& record);

  int bitwidth() const { return bitwidth_; }
  const ControllerConfig& config() const { return cfg_; }
  const std::vector<Decision>& decisions() const { return decisions_; }

 private:
  std::optional<int> window_step();

  ControllerConfig cfg_;
  int bitwidth_;
  std::vector<TransferRecord> pending_;
  std::optional<WindowMetrics> previous_;
  double window_start_ = 0.0;
  std::vector<Decision> decisions_;
};

}  // namespace qpipe::control
