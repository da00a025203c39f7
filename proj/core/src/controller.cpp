// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "qpipe/controller.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qpipe/error.hpp"

namespace qpipe::control {

namespace {

constexpr double kBandwidthEpsilon = 1.0;  // bytes/s

int snap_to_allowed(double raw, const std::vector<int>& allowed) {
  // Largest allowed bitwidth not above raw; the smallest one otherwise.
  int best = allowed.front();
  for (int q : allowed) {
    if (q <= raw) {
      best = std::max(best, q);
    }
  }
  return best;
}

}  // namespace

void validate(const ControllerConfig& cfg) {
  if (!(cfg.target_rate > 0.0)) {
    throw InvalidArgument("target rate must be positive");
  }
  if (cfg.microbatch_size < 1) {
    throw InvalidArgument("microbatch size must be at least 1");
  }
  if (!(cfg.change_threshold > 0.0 && cfg.change_threshold < 1.0)) {
    throw InvalidArgument("change threshold must lie in (0, 1)");
  }
  if (cfg.window == 0) {
    throw InvalidArgument("window must hold at least one microbatch");
  }
  if (cfg.allowed_bitwidths.empty() ||
      !std::is_sorted(cfg.allowed_bitwidths.begin(),
                      cfg.allowed_bitwidths.end())) {
    throw InvalidArgument("allowed bitwidths must be a non-empty ascending set");
  }
  for (int q : cfg.allowed_bitwidths) {
    if (q < 2 || q > 32) {
      throw InvalidArgument("allowed bitwidths must lie in [2, 32]");
    }
  }
}

WindowMetrics summarize_window(std::span<const TransferRecord> records,
                               double window_start, int bitwidth) {
  WindowMetrics m;
  m.window_len = records.size();
  m.bitwidth = bitwidth;
  if (records.empty()) {
    return m;
  }
  double bytes = 0.0;
  double busy = 0.0;
  double images = 0.0;
  double scaled = 0.0;
  for (const auto& r : records) {
    bytes += r.bytes;
    busy += r.complete - r.start;
    images += r.images;
    scaled += r.bytes * bitwidth / r.bitwidth;
  }
  m.avg_bandwidth = busy > 0.0 ? bytes / busy : 0.0;
  const double elapsed = records.back().complete - window_start;
  m.avg_output_rate = elapsed > 0.0 ? images / elapsed : 0.0;
  m.avg_quantized_size = scaled / static_cast<double>(records.size());
  return m;
}

bool detect_change(const WindowMetrics& prev, const WindowMetrics& cur,
                   double threshold) {
  const double base = std::max(prev.avg_bandwidth, kBandwidthEpsilon);
  return std::fabs(cur.avg_bandwidth - prev.avg_bandwidth) / base > threshold;
}

int next_bitwidth(int q, double quantized_size, int microbatch_size,
                  double target_rate, double bandwidth,
                  const ControllerConfig& cfg) {
  if (q <= 0 || !(quantized_size > 0.0) || microbatch_size <= 0 ||
      !(target_rate > 0.0) || !(bandwidth > 0.0)) {
    throw InvalidArgument("next_bitwidth needs positive inputs");
  }
  const double full_size = quantized_size * 32.0 / q;
  const double capacity = microbatch_size / target_rate * bandwidth;
  const double ratio = full_size / capacity;

  double raw = 0.0;
  if (cfg.ladder) {
    raw = 32.0 / ratio;
  } else {
    raw = 32.0 / std::exp2(std::ceil(std::log2(ratio)));
  }
  raw = std::clamp(raw, 2.0, 32.0);
  return snap_to_allowed(raw, cfg.allowed_bitwidths);
}

BitwidthController::BitwidthController(ControllerConfig cfg,
                                       int initial_bitwidth)
    : cfg_(std::move(cfg)), bitwidth_(initial_bitwidth) {
  validate(cfg_);
  pending_.reserve(cfg_.window);
}

std::optional<int> BitwidthController::observe(const TransferRecord& record) {
  pending_.push_back(record);
  if (pending_.size() < cfg_.window) {
    return std::nullopt;
  }
  return window_step();
}

std::optional<int> BitwidthController::window_step() {
  const WindowMetrics cur = summarize_window(pending_, window_start_, bitwidth_);
  const bool changed =
      previous_ && detect_change(*previous_, cur, cfg_.change_threshold);
  const bool slow = cur.avg_output_rate < cfg_.target_rate;

  Decision d;
  d.window_index = decisions_.size();
  d.window_start = window_start_;
  d.window_end = pending_.back().complete;
  d.metrics = cur;
  d.q_old = bitwidth_;
  d.q_new = bitwidth_;
  if (changed && slow) {
    d.reason = "bandwidth_change+rate_below_target";
  } else if (changed) {
    d.reason = "bandwidth_change";
  } else if (slow) {
    d.reason = "rate_below_target";
  } else {
    d.reason = "none";
  }
  if ((changed || slow) && cur.avg_bandwidth > 0.0 &&
      cur.avg_quantized_size > 0.0) {
    d.q_new = next_bitwidth(bitwidth_, cur.avg_quantized_size,
                            cfg_.microbatch_size, cfg_.target_rate,
                            cur.avg_bandwidth, cfg_);
  }

  decisions_.push_back(d);
  previous_ = cur;
  window_start_ = d.window_end;
  pending_.clear();

  if (d.q_new == bitwidth_) {
    return std::nullopt;
  }
  bitwidth_ = d.q_new;
  return bitwidth_;
}

}  // namespace qpipe::control
