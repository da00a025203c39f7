// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "qpipe/netsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "qpipe/error.hpp"

namespace qpipe::netsim {

void VirtualClock::advance_to(double t) {
  if (t < now_) {
    throw Error("virtual clock cannot move backwards");
  }
  now_ = t;
}

void EventQueue::schedule(double time, Action action) {
  if (time < clock_.now()) {
    throw Error("event scheduled in the past");
  }
  events_.push({time, next_seq_++, std::move(action)});
}

bool EventQueue::step() {
  if (events_.empty()) {
    return false;
  }
  Entry e = events_.top();
  events_.pop();
  clock_.advance_to(e.time);
  e.action();
  return true;
}

void EventQueue::run() {
  while (step()) {
  }
}

BandwidthSchedule::BandwidthSchedule(std::vector<RatePoint> points)
    : points_(std::move(points)) {
  if (points_.empty()) {
    throw InvalidArgument("bandwidth schedule is empty");
  }
  if (points_.front().start_sec != 0.0) {
    throw InvalidArgument("bandwidth schedule must start at t = 0");
  }
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!(points_[i].bytes_per_sec >= 0.0) ||
        !std::isfinite(points_[i].bytes_per_sec)) {
      throw InvalidArgument("bandwidth schedule rate must be finite and >= 0");
    }
    if (i > 0 && !(points_[i].start_sec > points_[i - 1].start_sec)) {
      throw InvalidArgument(
          "bandwidth schedule start times must strictly increase");
    }
  }
}

std::size_t BandwidthSchedule::segment_at(double t) const {
  auto it = std::upper_bound(
      points_.begin(), points_.end(), t,
      [](double v, const RatePoint& p) { return v < p.start_sec; });
  return it == points_.begin() ? 0
                               : static_cast<std::size_t>(it - points_.begin()) - 1;
}

double BandwidthSchedule::rate_at(double t) const {
  return points_[segment_at(t)].bytes_per_sec;
}

double BandwidthSchedule::capacity(double from, double to) const {
  if (!(to > from)) {
    return 0.0;
  }
  double total = 0.0;
  for (std::size_t i = segment_at(from); i < points_.size(); ++i) {
    const double seg_start = std::max(from, points_[i].start_sec);
    const double seg_end = i + 1 < points_.size()
                               ? std::min(to, points_[i + 1].start_sec)
                               : to;
    if (seg_end > seg_start) {
      total += points_[i].bytes_per_sec * (seg_end - seg_start);
    }
    if (seg_end >= to) {
      break;
    }
  }
  return total;
}

double BandwidthSchedule::time_to_send(double from, double bytes) const {
  if (!(bytes > 0.0)) {
    return from;
  }
  double remaining = bytes;
  for (std::size_t i = segment_at(from); i < points_.size(); ++i) {
    const double rate = points_[i].bytes_per_sec;
    const double seg_start = std::max(from, points_[i].start_sec);
    if (i + 1 == points_.size()) {
      if (rate <= 0.0) {
        break;
      }
      return seg_start + remaining / rate;
    }
    const double seg_end = points_[i + 1].start_sec;
    const double cap = rate * (seg_end - seg_start);
    if (rate > 0.0 && cap >= remaining) {
      return seg_start + remaining / rate;
    }
    remaining -= cap;
  }
  throw Error("link down");
}

double shaped_send(ChannelState& ch, double nbytes, double now) {
  if (!(ch.rate > 0.0)) {
    throw Error("link down");
  }
  if (nbytes < 0.0) {
    throw InvalidArgument("cannot send a negative byte count");
  }
  const double start = std::max(now, ch.last_update);
  ch.tokens = std::min(ch.burst, ch.tokens + ch.rate * (start - ch.last_update));
  ch.last_update = start;
  if (nbytes <= ch.tokens) {
    ch.tokens -= nbytes;
    return start;
  }
  const double complete = start + (nbytes - ch.tokens) / ch.rate;
  ch.tokens = 0.0;
  ch.last_update = complete;
  return complete;
}

void apply_schedule(ChannelState& ch, const BandwidthSchedule& sched, double now) {
  if (now > ch.last_update) {
    ch.tokens = std::min(ch.burst, ch.tokens + sched.capacity(ch.last_update, now));
    ch.last_update = now;
  }
  ch.rate = sched.rate_at(now);
}

double measure_bandwidth(std::span<const SendRecord> log, double window_end,
                         double window) {
  if (!(window > 0.0)) {
    throw InvalidArgument("measurement window must be positive");
  }
  const double window_start = window_end - window;
  double bytes = 0.0;
  for (const auto& r : log) {
    if (r.complete > window_start && r.complete <= window_end) {
      bytes += r.bytes;
    }
  }
  return bytes / window;
}

double measure_link_rate(std::span<const SendRecord> log) {
  double bytes = 0.0;
  double busy = 0.0;
  for (const auto& r : log) {
    bytes += r.bytes;
    busy += r.complete - r.start;
  }
  return busy > 0.0 ? bytes / busy : 0.0;
}

Channel::Channel(BandwidthSchedule schedule, double burst,
                 double propagation_delay)
    : schedule_(std::move(schedule)), propagation_delay_(propagation_delay) {
  if (!(burst >= 0.0)) {
    throw InvalidArgument("burst must be non-negative");
  }
  if (!(propagation_delay >= 0.0)) {
    throw InvalidArgument("propagation delay must be non-negative");
  }
  state_.burst = burst;
  state_.tokens = burst;
  state_.rate = schedule_.rate_at(0.0);
}

void Channel::refill(double t) {
  if (t > state_.last_update) {
    state_.tokens = std::min(
        state_.burst, state_.tokens + schedule_.capacity(state_.last_update, t));
    state_.last_update = t;
  }
  state_.rate = schedule_.rate_at(t);
}

SendRecord Channel::send(double nbytes, double now) {
  if (nbytes < 0.0) {
    throw InvalidArgument("cannot send a negative byte count");
  }
  SendRecord rec;
  rec.id = log_.size();
  rec.submit = now;
  rec.bytes = nbytes;
  rec.start = std::max(now, state_.last_update);
  refill(rec.start);
  if (nbytes <= state_.tokens) {
    state_.tokens -= nbytes;
    rec.complete = rec.start;
  } else {
    rec.complete = schedule_.time_to_send(rec.start, nbytes - state_.tokens);
    state_.tokens = 0.0;
    state_.last_update = rec.complete;
    state_.rate = schedule_.rate_at(rec.complete);
  }
  bytes_sent_ += nbytes;
  log_.push_back(rec);
  return rec;
}

void write_trace_csv(std::ostream& out, std::span<const TraceEvent> events) {
  out << "time,channel,bytes,event_type\n";
  char buf[64];
  for (const auto& e : events) {
    std::snprintf(buf, sizeof(buf), "%.9f", e.time);
    out << buf << ',' << e.channel << ',';
    std::snprintf(buf, sizeof(buf), "%.0f", e.bytes);
    out << buf << ',' << e.type << '\n';
  }
}

}  // namespace qpipe::netsim
