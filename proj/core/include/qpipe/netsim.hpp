// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <queue>
#include <span>
#include <string>
#include <vector>

namespace qpipe::netsim {

inline constexpr double kBytesPerMbps = 125'000.0;
inline constexpr double kDefaultBurstBytes = 64.0 * 1024.0;

constexpr double mbps_to_bytes_per_sec(double mbps) { return mbps * kBytesPerMbps; }
constexpr double bytes_per_sec_to_mbps(double bps) { return bps / kBytesPerMbps; }

/// Simulation time in seconds. Only moves forward.
class VirtualClock {
 public:
  double now() const { return now_; }
  void advance_to(double t);

 private:
  double now_ = 0.0;
};

/// Time-ordered event queue; events at equal times run in insertion order.
class EventQueue {
 public:
  using Action = std::function<void()>;

  void schedule(double time, Action action);
  void schedule_in(double delay, Action action) {
    schedule(clock_.now() + delay, std::move(action));
  }

  /// Runs the earliest event. Returns false when the queue is empty.
  bool step();
  void run();

  bool empty() const { return events_.empty(); }
  const VirtualClock& clock() const { return clock_; }
  double now() const { return clock_.now(); }

 private:
  struct Entry {
    double time;
    std::uint64_t seq;
    Action action;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };

  VirtualClock clock_;
  std::uint64_t next_seq_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, Later> events_;
};

struct RatePoint {
  double start_sec = 0.0;
  double bytes_per_sec = 0.0;
};

/// Piecewise-constant link rate. The first point starts at t = 0 and start
/// times strictly increase; the last rate persists forever.
class BandwidthSchedule {
 public:
  explicit BandwidthSchedule(std::vector<RatePoint> points);
  static BandwidthSchedule constant(double bytes_per_sec) {
    return BandwidthSchedule({{0.0, bytes_per_sec}});
  }

  double rate_at(double t) const;
  /// Index of the segment active at time t.
  std::size_t segment_at(double t) const;
  const std::vector<RatePoint>& points() const { return points_; }

  /// Bytes the link can carry over [from, to].
  double capacity(double from, double to) const;

  /// Earliest time >= from at which capacity(from, t) reaches `bytes`.
  /// Throws Error("link down") if the schedule never supplies them.
  double time_to_send(double from, double bytes) const;

 private:
  std::vector<RatePoint> points_;
};

/// Token bucket: rate in bytes/s, burst in bytes, tokens in [0, burst].
struct ChannelState {
  double rate = 0.0;
  double burst = kDefaultBurstBytes;
  double tokens = kDefaultBurstBytes;
  double last_update = 0.0;
};

/// Transmits `nbytes` through a constant-rate token bucket. Messages are
/// serialized FIFO: a send issued while an earlier one is still draining the
/// bucket starts when that one completes. Returns the completion time.
double shaped_send(ChannelState& ch, double nbytes, double now);

/// Updates `ch.rate` to the schedule's rate at `now`, crediting tokens
/// accrued at the previous rate first.
void apply_schedule(ChannelState& ch, const BandwidthSchedule& sched, double now);

struct SendRecord {
  std::uint64_t id = 0;
  double submit = 0.0;
  double start = 0.0;     // transmission start (FIFO head)
  double complete = 0.0;  // last byte on the wire
  double bytes = 0.0;
};

/// Sum of bytes completed in (window_end - window, window_end], divided by
/// the window length.
double measure_bandwidth(std::span<const SendRecord> log, double window_end,
                         double window);

/// Bytes divided by the time the link spent transmitting them.
double measure_link_rate(std::span<const SendRecord> log);

/// A shaped point-to-point link following a bandwidth schedule.
class Channel {
 public:
  Channel(BandwidthSchedule schedule, double burst = kDefaultBurstBytes,
          double propagation_delay = 0.0);

  /// Queues a message at `now`. Rate changes that occur while the message
  /// is draining apply to its untransmitted bytes.
  SendRecord send(double nbytes, double now);

  double propagation_delay() const { return propagation_delay_; }
  double busy_until() const { return state_.last_update; }
  const ChannelState& state() const { return state_; }
  const BandwidthSchedule& schedule() const { return schedule_; }
  const std::vector<SendRecord>& log() const { return log_; }
  double bytes_sent() const { return bytes_sent_; }

 private:
  void refill(double t);

  BandwidthSchedule schedule_;
  ChannelState state_;
  double propagation_delay_;
  std::vector<SendRecord> log_;
  double bytes_sent_ = 0.0;
};

struct TraceEvent {
  double time = 0.0;
  int channel = 0;
  double bytes = 0.0;
  std::string type;
};

/// CSV header "time,channel,bytes,event_type".
void write_trace_csv(std::ostream& out, std::span<const TraceEvent> events);

}  // namespace qpipe::netsim
