// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "qpipe/app/app.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>

#include "qpipe/error.hpp"

namespace qpipe::app {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot write " + p.string());
  }
  return out;
}

void write_key_values(const fs::path& p,
                      const std::vector<std::pair<std::string, std::string>>& kv) {
  auto out = open_out(p);
  CsvWriter w(out);
  w.row({"key", "value"});
  for (const auto& [k, v] : kv) {
    w.row({k, v});
  }
}

std::string list_str(std::span<const int> v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += (i ? "," : "") + std::to_string(v[i]);
  }
  return s + "]";
}

struct Prepared {
  model::ToyModel model;
  std::vector<model::Microbatch> dataset;
};

Prepared prepare(Scenario& s) {
  try {
    Prepared p{model::ToyModel::build(s.model_seed, s.dims),
               model::make_dataset(s.dataset, s.dims)};
    finalize(s, p.model, p.dataset);
    return p;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

// --- run -----------------------------------------------------------------------

void check_run(const Scenario& s, const pipeline::RunTrace& trace,
               const Summary& summary, double agreement, Outcome& o) {
  const Expectations& e = s.expect;
  const auto& cfg = s.config;

  std::vector<const PhaseRow*> link0;
  for (const auto& p : summary.phases) {
    if (p.stage == 0) {
      link0.push_back(&p);
    }
  }

  if (!e.phase_bitwidths.empty()) {
    std::vector<int> got;
    for (const PhaseRow* p : link0) {
      got.push_back(p->steady_bitwidth.value_or(-1));
    }
    o.checks.push_back({"phase_bitwidths", got == e.phase_bitwidths,
                        "expected " + list_str(e.phase_bitwidths) + " got " +
                            list_str(got)});
  }

  if (!e.bitwidth_sequences.empty() && !summary.timelines.empty()) {
    auto allowed = e.bitwidth_sequences;
    if (cfg.controller.ladder) {
      allowed.insert(allowed.end(), e.ladder_bitwidth_sequences.begin(),
                     e.ladder_bitwidth_sequences.end());
    }
    const auto& tl = summary.timelines.front();
    const bool ok = std::find(allowed.begin(), allowed.end(), tl) != allowed.end();
    o.checks.push_back({"bitwidth_sequence", ok, "timeline " + join_timeline(tl)});
  }

  if (e.min_agreement) {
    o.checks.push_back({"min_agreement", agreement >= *e.min_agreement,
                        num(agreement, 4) + " >= " + num(*e.min_agreement, 4)});
  }

  if (e.min_steady_rate) {
    bool ok = !link0.empty();
    std::string detail;
    for (const PhaseRow* p : link0) {
      const double r = p->last_rate.value_or(0.0);
      ok = ok && p->last_rate && r >= *e.min_steady_rate;
      detail += (detail.empty() ? "" : " ") + num(r, 2);
    }
    o.checks.push_back({"min_steady_rate", ok,
                        "last-window rates [" + detail + "] >= " +
                            num(*e.min_steady_rate, 2)});
  }

  if (e.recovery && !cfg.links.empty()) {
    const double floor = e.recovery->fraction * cfg.controller.target_rate;
    std::vector<WindowRow> w0;
    for (const auto& r : output_windows(trace, cfg.controller.window,
                                        cfg.controller.microbatch_size)) {
      if (r.stage == 0) {
        w0.push_back(r);
      }
    }
    const auto& pts = cfg.links.front().schedule.points();
    bool ok = true;
    std::size_t drops = 0;
    std::string detail;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i].bytes_per_sec >= pts[i - 1].bytes_per_sec) {
        continue;
      }
      ++drops;
      const double t = pts[i].start_sec;
      const auto it = std::find_if(w0.begin(), w0.end(),
                                   [t](const WindowRow& r) { return r.end > t; });
      bool recovered = false;
      std::string best;
      if (it != w0.end()) {
        const auto first = static_cast<std::size_t>(it - w0.begin());
        for (std::size_t j = first + 1;
             j <= first + e.recovery->windows && j < w0.size(); ++j) {
          best += (best.empty() ? "" : "/") + num(w0[j].output_rate, 1);
          recovered = recovered || w0[j].output_rate >= floor;
        }
      }
      ok = ok && recovered;
      detail += (detail.empty() ? "" : "; ") + std::string("t=") + num(t, 1) +
                " rates " + (best.empty() ? "none" : best);
    }
    o.checks.push_back({"recovery", ok && drops > 0,
                        std::to_string(drops) + " drops, floor " + num(floor, 1) +
                            ": " + detail});
  }
}

Outcome run_single(Scenario& s, const fs::path& out_dir) {
  Prepared p = prepare(s);
  Outcome o;
  auto trace = pipeline::run_pipeline(p.model, s.shards, p.dataset, s.config);
  const auto reference =
      pipeline::reference_predictions(p.model, p.dataset, s.config.microbatches);
  const auto preds = pipeline::predictions(trace);
  o.agreement = pipeline::top1_agreement(preds, reference);

  write_run_traces(out_dir, trace, s.config, reference,
                   s.config.controller.microbatch_size);
  Summary summary = summarize(out_dir);
  {
    auto out = open_out(out_dir / "phases.csv");
    write_phases_csv(out, summary);
  }

  // Agreement grouped by the bitwidth each microbatch crossed link 0 at.
  std::map<int, std::pair<std::size_t, std::size_t>, std::greater<>> by_q;
  std::size_t offset = 0;
  for (const auto& mb : trace.microbatches) {
    const int q = mb.links.empty() ? 32 : mb.links.front().bitwidth;
    auto& [same, total] = by_q[q];
    for (std::size_t i = 0; i < mb.predictions.size(); ++i) {
      same += mb.predictions[i] == reference[offset + i] ? 1 : 0;
    }
    total += mb.predictions.size();
    offset += mb.predictions.size();
  }

  double makespan = 0.0;
  for (const auto& mb : trace.microbatches) {
    makespan = std::max(makespan, mb.completion);
  }
  std::vector<std::pair<std::string, std::string>> kv = {
      {"schema_version", "1"},
      {"scenario", s.name},
      {"kind", std::string(to_string(s.kind))},
      {"quant_mode", std::string(to_string(s.config.quant.mode))},
      {"method", std::string(to_string(s.config.quant.method))},
      {"ladder", s.config.controller.ladder ? "true" : "false"},
      {"stages", std::to_string(s.shards.size())},
      {"microbatches", std::to_string(s.config.microbatches)},
      {"makespan_sec", num(makespan)},
      {"throughput_img_s", num(steady_throughput(trace))},
      {"agreement", num(o.agreement)},
  };
  for (const auto& [q, st] : by_q) {
    kv.emplace_back("agreement_q" + std::to_string(q),
                    num(static_cast<double>(st.first) / static_cast<double>(st.second)));
  }
  for (std::size_t k = 0; k < summary.timelines.size(); ++k) {
    kv.emplace_back("bitwidth_timeline_stage" + std::to_string(k),
                    join_timeline(summary.timelines[k]));
  }
  kv.emplace_back("phases", std::to_string(summary.phases.size()));
  write_key_values(out_dir / "summary.csv", kv);

  check_run(s, trace, summary, o.agreement, o);
  o.summary = std::move(summary);
  o.trace = std::move(trace);
  return o;
}

// --- bandwidth sweep -------------------------------------------------------------

Outcome run_bandwidth_sweep(Scenario& s, const fs::path& out_dir) {
  Prepared p = prepare(s);
  if (s.config.microbatches < 4) {
    throw ConfigError("bandwidth_sweep needs at least 4 microbatches");
  }
  Outcome o;
  const double images = s.config.controller.microbatch_size;
  const double slowest =
      *std::max_element(s.config.compute_latency.begin(), s.config.compute_latency.end());
  for (double mbps : s.sweep_mbps) {
    pipeline::PipelineConfig cfg = s.config;
    for (auto& link : cfg.links) {
      link.schedule =
          netsim::BandwidthSchedule::constant(netsim::mbps_to_bytes_per_sec(mbps));
    }
    const auto trace = pipeline::run_pipeline(p.model, s.shards, p.dataset, cfg);
    SweepPoint pt;
    pt.mbps = mbps;
    pt.throughput = steady_throughput(trace);
    pt.compute_bound = slowest > 0.0 ? images / slowest : INFINITY;
    pt.link_bound = INFINITY;
    for (std::size_t k = 0; k < cfg.links.size(); ++k) {
      const double bytes = trace.microbatches.back().links[k].bytes;
      if (bytes > 0.0) {
        pt.link_bound = std::min(
            pt.link_bound, images * netsim::mbps_to_bytes_per_sec(mbps) / bytes);
      }
    }
    pt.predicted = std::min(pt.compute_bound, pt.link_bound);
    pt.rel_error = std::fabs(pt.throughput - pt.predicted) / pt.predicted;
    o.sweep.push_back(pt);
  }

  fs::create_directories(out_dir);
  {
    auto out = open_out(out_dir / "fig1_sweep.csv");
    CsvWriter w(out);
    w.row({"mbps", "throughput_img_s", "compute_bound_img_s", "link_bound_img_s",
           "predicted_img_s", "rel_error", "bottleneck"});
    for (const auto& pt : o.sweep) {
      w.row({num(pt.mbps, 3), num(pt.throughput), num(pt.compute_bound),
             std::isfinite(pt.link_bound) ? num(pt.link_bound) : "inf",
             num(pt.predicted), num(pt.rel_error),
             pt.compute_bound <= pt.link_bound ? "compute" : "link"});
    }
  }
  write_key_values(out_dir / "summary.csv",
                   {{"schema_version", "1"},
                    {"scenario", s.name},
                    {"kind", std::string(to_string(s.kind))},
                    {"points", std::to_string(o.sweep.size())}});

  if (s.expect.bottleneck_tolerance) {
    double worst = 0.0;
    for (const auto& pt : o.sweep) {
      worst = std::max(worst, pt.rel_error);
    }
    o.checks.push_back({"bottleneck_law", worst <= *s.expect.bottleneck_tolerance,
                        "max relative error " + num(worst, 5) + " <= " +
                            num(*s.expect.bottleneck_tolerance, 3)});
  }
  return o;
}

// --- bitwidth sweep ----------------------------------------------------------------

Outcome run_bitwidth_sweep(Scenario& s, const fs::path& out_dir) {
  // Every sweep point is a fixed-bitwidth run, whatever the base mode says.
  s.config.quant.mode = pipeline::QuantMode::kFixed;
  Prepared p = prepare(s);
  Outcome o;
  const auto reference =
      pipeline::reference_predictions(p.model, p.dataset, s.config.microbatches);

  AgreementTable table;
  table.bitwidths = s.sweep_bitwidths;
  table.methods = s.sweep_methods;
  for (quant::Method m : table.methods) {
    std::vector<double> row;
    for (int q : table.bitwidths) {
      pipeline::PipelineConfig cfg = s.config;
      cfg.quant.method = m;
      cfg.quant.bitwidth = q;
      const auto trace = pipeline::run_pipeline(p.model, s.shards, p.dataset, cfg);
      row.push_back(pipeline::top1_agreement(pipeline::predictions(trace), reference));
    }
    table.agreement.push_back(std::move(row));
  }

  fs::create_directories(out_dir);
  {
    auto out = open_out(out_dir / "accuracy_table.csv");
    CsvWriter w(out);
    std::vector<std::string> header = {"bitwidth"};
    for (quant::Method m : table.methods) {
      header.emplace_back(to_string(m));
    }
    w.row(header);
    for (std::size_t b = 0; b < table.bitwidths.size(); ++b) {
      std::vector<std::string> row = {std::to_string(table.bitwidths[b])};
      for (std::size_t m = 0; m < table.methods.size(); ++m) {
        row.push_back(num(table.agreement[m][b]));
      }
      w.row(row);
    }
  }
  write_key_values(out_dir / "summary.csv",
                   {{"schema_version", "1"},
                    {"scenario", s.name},
                    {"kind", std::string(to_string(s.kind))},
                    {"images", std::to_string(reference.size())}});

  const Expectations& e = s.expect;
  for (const auto& f : e.floors) {
    const double a = table.at(f.method, f.bitwidth);
    o.checks.push_back({std::string("floor_") + std::string(to_string(f.method)) +
                            "_q" + std::to_string(f.bitwidth),
                        a >= f.min_agreement,
                        num(a, 4) + " >= " + num(f.min_agreement, 4)});
  }
  for (const auto& ord : e.orderings) {
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < ord.best_first.size(); ++i) {
      const double a = table.at(ord.best_first[i], ord.bitwidth);
      if (i > 0) {
        ok = ok && table.at(ord.best_first[i - 1], ord.bitwidth) > a;
        detail += " > ";
      }
      detail += std::string(to_string(ord.best_first[i])) + " " + num(a, 4);
    }
    o.checks.push_back({"ordering_q" + std::to_string(ord.bitwidth), ok, detail});
  }
  if (e.monotone_agreement) {
    std::vector<int> desc = table.bitwidths;
    std::sort(desc.begin(), desc.end(), std::greater<>());
    bool ok = true;
    std::string detail;
    for (quant::Method m : table.methods) {
      for (std::size_t i = 1; i < desc.size(); ++i) {
        if (table.at(m, desc[i]) > table.at(m, desc[i - 1])) {
          ok = false;
          detail += std::string(to_string(m)) + " rises at q" +
                    std::to_string(desc[i]) + "; ";
        }
      }
    }
    o.checks.push_back({"monotone_agreement", ok, ok ? "non-increasing" : detail});
  }
  o.table = std::move(table);
  return o;
}

}  // namespace

double AgreementTable::at(quant::Method m, int q) const {
  const auto mi = std::find(methods.begin(), methods.end(), m);
  const auto bi = std::find(bitwidths.begin(), bitwidths.end(), q);
  if (mi == methods.end() || bi == bitwidths.end()) {
    throw ConfigError("expectation refers to a method or bitwidth not in the sweep");
  }
  return agreement[static_cast<std::size_t>(mi - methods.begin())]
                  [static_cast<std::size_t>(bi - bitwidths.begin())];
}

bool Outcome::passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const Check& c) { return c.passed; });
}

double steady_throughput(const pipeline::RunTrace& trace) {
  const auto& mbs = trace.microbatches;
  if (mbs.size() < 2) {
    return 0.0;
  }
  const std::size_t mid = mbs.size() / 2;
  double images = 0.0;
  for (std::size_t i = mid + 1; i < mbs.size(); ++i) {
    images += static_cast<double>(mbs[i].predictions.size());
  }
  const double span = mbs.back().completion - mbs[mid].completion;
  return span > 0.0 ? images / span : 0.0;
}

Outcome run_scenario(Scenario scenario, const fs::path& out_dir,
                     const RunOptions& options) {
  if (options.seed) {
    override_seed(scenario, *options.seed);
  }
  if (options.ladder) {
    scenario.config.controller.ladder = true;
  }
  switch (scenario.kind) {
    case ScenarioKind::kRun:
      return run_single(scenario, out_dir);
    case ScenarioKind::kBandwidthSweep:
      return run_bandwidth_sweep(scenario, out_dir);
    case ScenarioKind::kBitwidthSweep:
      return run_bitwidth_sweep(scenario, out_dir);
  }
  throw ConfigError("unknown scenario kind");
}

void print_checks(std::ostream& out, const std::vector<Check>& checks) {
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
  }
}

}  // namespace qpipe::app
