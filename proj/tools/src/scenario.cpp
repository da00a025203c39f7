// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "qpipe/app/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"
#include "qpipe/error.hpp"

namespace qpipe::app {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                std::string_view where) {
  if (!j.is_object()) {
    throw ConfigError(std::string(where) + ": expected an object");
  }
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw ConfigError(std::string(where) + ": unknown key \"" + item.key() +
                        "\"");
    }
  }
}

template <typename T>
T get(const json& j, const char* key, T fallback, std::string_view where) {
  if (!j.contains(key)) {
    return fallback;
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(where) + "." + key + ": wrong type");
  }
}

std::size_t get_count(const json& j, const char* key, std::size_t fallback,
                      std::string_view where) {
  const auto v = get<std::int64_t>(j, key, static_cast<std::int64_t>(fallback),
                                   where);
  if (v < 0) {
    throw ConfigError(std::string(where) + "." + key + ": must be >= 0");
  }
  return static_cast<std::size_t>(v);
}

netsim::BandwidthSchedule parse_schedule(const json& j, std::string_view where) {
  if (!j.is_array() || j.empty()) {
    throw ConfigError(std::string(where) + ": schedule must be a non-empty list");
  }
  std::vector<netsim::RatePoint> points;
  for (const auto& e : j) {
    check_keys(e, {"t_sec", "mbps"}, where);
    if (!e.contains("t_sec") || !e.contains("mbps")) {
      throw ConfigError(std::string(where) + ": entries need t_sec and mbps");
    }
    points.push_back({get<double>(e, "t_sec", 0.0, where),
                      netsim::mbps_to_bytes_per_sec(get<double>(e, "mbps", 0.0, where))});
  }
  try {
    return netsim::BandwidthSchedule(std::move(points));
  } catch (const Error& e) {
    throw ConfigError(std::string(where) + ": " + e.what());
  }
}

pipeline::LinkConfig parse_link(const json& j, std::string_view where) {
  check_keys(j, {"schedule", "burst_bytes", "propagation_delay_sec"}, where);
  pipeline::LinkConfig link;
  if (j.contains("schedule")) {
    link.schedule = parse_schedule(j.at("schedule"), where);
  }
  link.burst = get<double>(j, "burst_bytes", link.burst, where);
  link.propagation_delay =
      get<double>(j, "propagation_delay_sec", link.propagation_delay, where);
  if (!(link.burst >= 0.0) || !(link.propagation_delay >= 0.0)) {
    throw ConfigError(std::string(where) + ": burst and delay must be >= 0");
  }
  return link;
}

std::vector<int> int_list(const json& j, std::string_view where) {
  try {
    return j.get<std::vector<int>>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(where) + ": expected a list of integers");
  }
}

std::vector<std::vector<int>> int_lists(const json& j, std::string_view where) {
  try {
    return j.get<std::vector<std::vector<int>>>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(where) + ": expected a list of integer lists");
  }
}

void parse_controller(const json& j, control::ControllerConfig& c) {
  constexpr std::string_view where = "controller";
  check_keys(j, {"target_rate", "change_threshold", "allowed_bitwidths", "ladder",
                 "window"},
             where);
  c.target_rate = get<double>(j, "target_rate", c.target_rate, where);
  c.change_threshold = get<double>(j, "change_threshold", c.change_threshold, where);
  if (j.contains("allowed_bitwidths")) {
    c.allowed_bitwidths = int_list(j.at("allowed_bitwidths"), where);
  }
  c.ladder = get<bool>(j, "ladder", c.ladder, where);
  c.window = get_count(j, "window", c.window, where);
}

void parse_quant(const json& j, pipeline::QuantConfig& q) {
  constexpr std::string_view where = "quant";
  check_keys(j, {"mode", "method", "bitwidth", "histogram_bins", "search_steps",
                 "search_max_bitwidth"},
             where);
  if (j.contains("mode")) {
    q.mode = parse_mode(get<std::string>(j, "mode", "", where));
  }
  if (j.contains("method")) {
    q.method = parse_method(get<std::string>(j, "method", "", where));
  }
  q.bitwidth = get<int>(j, "bitwidth", q.bitwidth, where);
  q.options.histogram_bins =
      get_count(j, "histogram_bins", q.options.histogram_bins, where);
  q.options.search_steps = get_count(j, "search_steps", q.options.search_steps, where);
  q.options.search_max_bitwidth =
      get<int>(j, "search_max_bitwidth", q.options.search_max_bitwidth, where);
}

void parse_expect(const json& j, Expectations& e) {
  constexpr std::string_view where = "expect";
  check_keys(j, {"phase_bitwidths", "bitwidth_sequences",
                 "ladder_bitwidth_sequences", "min_agreement", "min_steady_rate",
                 "recovery", "bottleneck_tolerance", "floors", "orderings",
                 "monotone_agreement"},
             where);
  if (j.contains("phase_bitwidths")) {
    e.phase_bitwidths = int_list(j.at("phase_bitwidths"), where);
  }
  if (j.contains("bitwidth_sequences")) {
    e.bitwidth_sequences = int_lists(j.at("bitwidth_sequences"), where);
  }
  if (j.contains("ladder_bitwidth_sequences")) {
    e.ladder_bitwidth_sequences = int_lists(j.at("ladder_bitwidth_sequences"), where);
  }
  if (j.contains("min_agreement")) {
    e.min_agreement = get<double>(j, "min_agreement", 0.0, where);
  }
  if (j.contains("min_steady_rate")) {
    e.min_steady_rate = get<double>(j, "min_steady_rate", 0.0, where);
  }
  if (j.contains("recovery")) {
    const json& r = j.at("recovery");
    check_keys(r, {"fraction", "windows"}, "expect.recovery");
    Recovery rec;
    rec.fraction = get<double>(r, "fraction", rec.fraction, "expect.recovery");
    rec.windows = get_count(r, "windows", rec.windows, "expect.recovery");
    e.recovery = rec;
  }
  if (j.contains("bottleneck_tolerance")) {
    e.bottleneck_tolerance = get<double>(j, "bottleneck_tolerance", 0.0, where);
  }
  if (j.contains("floors")) {
    for (const auto& f : j.at("floors")) {
      check_keys(f, {"method", "bitwidth", "min_agreement"}, "expect.floors");
      e.floors.push_back(
          {parse_method(get<std::string>(f, "method", "", "expect.floors")),
           get<int>(f, "bitwidth", 0, "expect.floors"),
           get<double>(f, "min_agreement", 0.0, "expect.floors")});
    }
  }
  if (j.contains("orderings")) {
    for (const auto& o : j.at("orderings")) {
      check_keys(o, {"bitwidth", "best_first"}, "expect.orderings");
      MethodOrdering ord;
      ord.bitwidth = get<int>(o, "bitwidth", 0, "expect.orderings");
      for (const auto& m : get<std::vector<std::string>>(
               o, "best_first", {}, "expect.orderings")) {
        ord.best_first.push_back(parse_method(m));
      }
      e.orderings.push_back(std::move(ord));
    }
  }
  e.monotone_agreement = get<bool>(j, "monotone_agreement", false, where);
}

}  // namespace

ScenarioKind parse_kind(std::string_view s) {
  if (s == "run") return ScenarioKind::kRun;
  if (s == "bandwidth_sweep") return ScenarioKind::kBandwidthSweep;
  if (s == "bitwidth_sweep") return ScenarioKind::kBitwidthSweep;
  throw ConfigError("unknown scenario kind \"" + std::string(s) + "\"");
}

std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kRun:
      return "run";
    case ScenarioKind::kBandwidthSweep:
      return "bandwidth_sweep";
    case ScenarioKind::kBitwidthSweep:
      return "bitwidth_sweep";
  }
  return "?";
}

pipeline::QuantMode parse_mode(std::string_view s) {
  if (s == "off") return pipeline::QuantMode::kOff;
  if (s == "fixed") return pipeline::QuantMode::kFixed;
  if (s == "adaptive") return pipeline::QuantMode::kAdaptive;
  throw ConfigError("unknown quant mode \"" + std::string(s) + "\"");
}

std::string_view to_string(pipeline::QuantMode m) {
  switch (m) {
    case pipeline::QuantMode::kOff:
      return "off";
    case pipeline::QuantMode::kFixed:
      return "fixed";
    case pipeline::QuantMode::kAdaptive:
      return "adaptive";
  }
  return "?";
}

quant::Method parse_method(std::string_view s) {
  if (s == "naive") return quant::Method::kNaive;
  if (s == "aciq") return quant::Method::kAciq;
  if (s == "pda") return quant::Method::kPda;
  throw ConfigError("unknown method \"" + std::string(s) + "\"");
}

std::string_view to_string(quant::Method m) {
  switch (m) {
    case quant::Method::kNaive:
      return "naive";
    case quant::Method::kAciq:
      return "aciq";
    case quant::Method::kPda:
      return "pda";
  }
  return "?";
}

Scenario parse_scenario(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  constexpr std::string_view where = "scenario";
  check_keys(j, {"name", "kind", "model", "dataset", "microbatch_size", "stages",
                 "shards", "compute_latency_sec", "links", "microbatches",
                 "wire_elems_per_image", "controller", "quant", "sweep", "expect"},
             where);

  Scenario s;
  s.name = get<std::string>(j, "name", "unnamed", where);
  s.kind = parse_kind(get<std::string>(j, "kind", "run", where));

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, {"seed", "input_dim", "hidden_dim", "n_classes", "blocks"}, "model");
    s.model_seed = get<std::uint64_t>(m, "seed", s.model_seed, "model");
    s.dims.input_dim = get<std::uint32_t>(m, "input_dim", s.dims.input_dim, "model");
    s.dims.hidden_dim = get<std::uint32_t>(m, "hidden_dim", s.dims.hidden_dim, "model");
    s.dims.n_classes = get<std::uint32_t>(m, "n_classes", s.dims.n_classes, "model");
    s.dims.blocks = get<std::uint32_t>(m, "blocks", s.dims.blocks, "model");
  }
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, {"seed", "microbatches", "center_scale", "contrast_min",
                   "contrast_max"},
               "dataset");
    s.dataset.seed = get<std::uint64_t>(d, "seed", s.dataset.seed, "dataset");
    s.dataset.microbatches =
        get_count(d, "microbatches", s.dataset.microbatches, "dataset");
    s.dataset.center_scale =
        get<double>(d, "center_scale", s.dataset.center_scale, "dataset");
    s.dataset.contrast_min =
        get<double>(d, "contrast_min", s.dataset.contrast_min, "dataset");
    s.dataset.contrast_max =
        get<double>(d, "contrast_max", s.dataset.contrast_max, "dataset");
  }
  const auto mb_size = get<std::int64_t>(j, "microbatch_size", 64, where);
  if (mb_size < 1 || mb_size > 1'000'000) {
    throw ConfigError("microbatch_size must be in [1, 1000000]");
  }
  s.dataset.microbatch_size = static_cast<std::uint32_t>(mb_size);
  s.config.controller.microbatch_size = static_cast<int>(mb_size);

  if (j.contains("stages") && j.contains("shards")) {
    throw ConfigError("give either stages or shards, not both");
  }
  if (j.contains("stages")) {
    s.stages = get_count(j, "stages", 0, where);
  } else if (j.contains("shards")) {
    int stage = 0;
    for (const auto& r : int_lists(j.at("shards"), "shards")) {
      if (r.size() != 2 || r[0] < 0 || r[1] < r[0]) {
        throw ConfigError("shards: each entry is [lo, hi) with 0 <= lo <= hi");
      }
      s.shards.push_back({stage++, static_cast<std::size_t>(r[0]),
                          static_cast<std::size_t>(r[1])});
    }
  } else {
    s.stages = 2;
  }

  if (j.contains("compute_latency_sec")) {
    const json& c = j.at("compute_latency_sec");
    if (c.is_number()) {
      s.config.compute_latency = {c.get<double>()};
    } else {
      try {
        s.config.compute_latency = c.get<std::vector<double>>();
      } catch (const json::exception&) {
        throw ConfigError("compute_latency_sec: expected a number or a list");
      }
    }
  }
  if (j.contains("links")) {
    const json& l = j.at("links");
    if (!l.is_array()) {
      throw ConfigError("links: expected a list");
    }
    for (std::size_t i = 0; i < l.size(); ++i) {
      s.config.links.push_back(parse_link(l[i], "links[" + std::to_string(i) + "]"));
    }
  }
  s.config.microbatches = get_count(j, "microbatches", 0, where);
  if (j.contains("wire_elems_per_image")) {
    s.config.wire_elems_per_image =
        get<std::uint64_t>(j, "wire_elems_per_image", 0, where);
  }
  if (j.contains("controller")) {
    parse_controller(j.at("controller"), s.config.controller);
  }
  if (j.contains("quant")) {
    parse_quant(j.at("quant"), s.config.quant);
  }
  if (j.contains("sweep")) {
    const json& w = j.at("sweep");
    check_keys(w, {"mbps", "bitwidths", "methods"}, "sweep");
    s.sweep_mbps = get<std::vector<double>>(w, "mbps", {}, "sweep");
    if (w.contains("bitwidths")) {
      s.sweep_bitwidths = int_list(w.at("bitwidths"), "sweep");
    }
    for (const auto& m : get<std::vector<std::string>>(w, "methods", {}, "sweep")) {
      s.sweep_methods.push_back(parse_method(m));
    }
  }
  if (j.contains("expect")) {
    parse_expect(j.at("expect"), s.expect);
  }

  if (s.kind == ScenarioKind::kBandwidthSweep && s.sweep_mbps.empty()) {
    throw ConfigError("bandwidth_sweep needs sweep.mbps");
  }
  for (double r : s.sweep_mbps) {
    if (!(r > 0.0)) {
      throw ConfigError("sweep.mbps values must be positive");
    }
  }
  if (s.kind == ScenarioKind::kBitwidthSweep) {
    if (s.sweep_bitwidths.empty()) {
      s.sweep_bitwidths = {32, 16, 8, 6, 4, 2};
    }
    if (s.sweep_methods.empty()) {
      s.sweep_methods = {quant::Method::kNaive, quant::Method::kAciq,
                         quant::Method::kPda};
    }
    for (int q : s.sweep_bitwidths) {
      if (!quant::is_supported_bitwidth(q)) {
        throw ConfigError("sweep.bitwidths: unsupported bitwidth " +
                          std::to_string(q));
      }
    }
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open scenario " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

void override_seed(Scenario& s, std::uint64_t seed) {
  s.model_seed = seed;
  s.dataset.seed = seed + 1;
}

void finalize(Scenario& s, const model::ToyModel& model,
              std::span<const model::Microbatch> dataset) {
  try {
    if (s.shards.empty()) {
      const auto costs = model.block_costs();
      s.shards = model::partition_even(costs, s.stages.value_or(2));
    }
    const std::size_t n = s.shards.size();
    auto& cfg = s.config;
    if (cfg.compute_latency.size() == 1 && n > 1) {
      cfg.compute_latency.assign(n, cfg.compute_latency.front());
    }
    if (cfg.compute_latency.empty()) {
      cfg.compute_latency.assign(n, 0.0);
    }
    if (cfg.links.empty()) {
      cfg.links.resize(n - 1);
    } else if (cfg.links.size() == 1 && n > 2) {
      cfg.links.assign(n - 1, cfg.links.front());
    }
    if (cfg.microbatches == 0) {
      cfg.microbatches = s.dataset.microbatches;
    }
    pipeline::validate(model, s.shards, dataset, cfg);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace qpipe::app
