// Copyright (C) 2026 The qpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "qpipe/app/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"
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

double to_double(const std::string& s, std::string_view what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) {
      throw std::invalid_argument(s);
    }
    return v;
  } catch (const std::exception&) {
    throw Error("bad number \"" + s + "\" in " + std::string(what));
  }
}

std::string opt(const std::optional<double>& v, int decimals = 6) {
  return v ? num(*v, decimals) : std::string();
}

}  // namespace

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) {
    return std::string(s);
  }
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') {
      out += '"';
    }
    out += c;
  }
  out += '"';
  return out;
}

std::string num(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  // Keep "-0.000000" out of the output.
  if (std::string_view(buf).find_first_not_of("-0.") == std::string_view::npos &&
      buf[0] == '-') {
    return std::string(buf + 1);
  }
  return buf;
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) {
      out_ << ',';
    }
    out_ << csv_field(fields[i]);
  }
  out_ << '\n';
}

std::size_t CsvTable::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw Error("missing column \"" + std::string(name) + "\"");
  }
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
        ++i;
      }
      if (any || !field.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
      }
      field.clear();
      record.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) {
    throw Error("unterminated quoted CSV field");
  }
  if (any || !field.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  CsvTable t;
  if (records.empty()) {
    return t;
  }
  t.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size()) {
      throw Error("CSV row " + std::to_string(r) + " has " +
                  std::to_string(records[r].size()) + " fields, header has " +
                  std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("missing trace " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

std::vector<WindowRow> output_windows(const pipeline::RunTrace& trace,
                                      std::size_t window, int microbatch_size) {
  std::vector<WindowRow> rows;
  if (trace.microbatches.empty() || window == 0) {
    return rows;
  }
  const std::size_t n_links = trace.microbatches.front().links.size();
  for (std::size_t k = 0; k <= n_links; ++k) {
    double start = 0.0;
    std::vector<control::TransferRecord> pending;
    std::size_t index = 0;
    for (const auto& mb : trace.microbatches) {
      const int images = static_cast<int>(mb.predictions.size());
      if (k < n_links) {
        const auto& lt = mb.links[k];
        pending.push_back({lt.start, lt.complete, lt.bytes, lt.bitwidth,
                           images > 0 ? images : microbatch_size});
      } else {
        pending.push_back({mb.completion, mb.completion, 0.0, 32, images});
      }
      if (pending.size() == window) {
        const auto m = control::summarize_window(pending, start, 32);
        const double end = pending.back().complete;
        rows.push_back({k, index++, start, end, pending.size(), m.avg_output_rate});
        start = end;
        pending.clear();
      }
    }
  }
  return rows;
}

void write_run_traces(const fs::path& dir, const pipeline::RunTrace& trace,
                      const pipeline::PipelineConfig& cfg,
                      std::span<const int> reference, int microbatch_size) {
  fs::create_directories(dir);

  {
    auto out = open_out(dir / "output_rate.csv");
    CsvWriter w(out);
    w.row({"stage", "window_index", "t_start_sec", "t_end_sec", "microbatches",
           "output_rate"});
    for (const auto& r :
         output_windows(trace, cfg.controller.window, microbatch_size)) {
      w.row({std::to_string(r.stage), std::to_string(r.index), num(r.start),
             num(r.end), std::to_string(r.microbatches), num(r.output_rate)});
    }
  }

  {
    auto out = open_out(dir / "bandwidth_bitwidth.csv");
    CsvWriter w(out);
    w.row({"microbatch_id", "stage", "submit_sec", "tx_start_sec",
           "tx_complete_sec", "link_mbps", "bitwidth", "bytes"});
    for (std::size_t k = 0; k < cfg.links.size(); ++k) {
      for (const auto& mb : trace.microbatches) {
        const auto& lt = mb.links[k];
        w.row({std::to_string(mb.id), std::to_string(k), num(lt.submit),
               num(lt.start), num(lt.complete),
               num(netsim::bytes_per_sec_to_mbps(
                       cfg.links[k].schedule.rate_at(lt.start)),
                   3),
               std::to_string(lt.bitwidth), num(lt.bytes, 0)});
      }
    }
  }

  {
    auto out = open_out(dir / "accuracy.csv");
    CsvWriter w(out);
    std::vector<std::string> header = {"microbatch_id", "completion_sec"};
    for (std::size_t k = 0; k < cfg.links.size(); ++k) {
      header.push_back("bitwidth_stage" + std::to_string(k));
    }
    header.push_back("agreement");
    w.row(header);
    std::size_t offset = 0;
    for (const auto& mb : trace.microbatches) {
      const std::size_t n = mb.predictions.size();
      if (offset + n > reference.size()) {
        throw Error("reference predictions are shorter than the run");
      }
      std::size_t same = 0;
      for (std::size_t i = 0; i < n; ++i) {
        same += mb.predictions[i] == reference[offset + i] ? 1 : 0;
      }
      offset += n;
      std::vector<std::string> row = {std::to_string(mb.id), num(mb.completion)};
      for (const auto& lt : mb.links) {
        row.push_back(std::to_string(lt.bitwidth));
      }
      row.push_back(num(n ? static_cast<double>(same) / static_cast<double>(n) : 0.0));
      w.row(row);
    }
  }

  for (std::size_t k = 0; k < trace.decisions.size(); ++k) {
    auto out = open_out(dir / ("controller_stage" + std::to_string(k) + ".csv"));
    CsvWriter w(out);
    w.row({"window_index", "avg_B_mbps", "avg_rate", "q_old", "q_new",
           "trigger_reason"});
    for (const auto& d : trace.decisions[k]) {
      w.row({std::to_string(d.window_index),
             num(netsim::bytes_per_sec_to_mbps(d.metrics.avg_bandwidth), 3),
             num(d.metrics.avg_output_rate), std::to_string(d.q_old),
             std::to_string(d.q_new), d.reason});
    }
  }

  {
    auto out = open_out(dir / "events.csv");
    netsim::write_trace_csv(out, trace.events);
  }

  {
    double virtual_compute = 0.0;
    for (const auto& mb : trace.microbatches) {
      for (const auto& st : mb.stages) {
        virtual_compute += st.compute_end - st.compute_start;
      }
    }
    const auto& wt = trace.wall;
    nlohmann::json j = {
        {"total_seconds", wt.total_seconds},
        {"compute_seconds", wt.compute_seconds},
        {"compress_seconds", wt.compress_seconds},
        {"search_seconds", wt.search_seconds},
        {"virtual_compute_seconds", virtual_compute},
    };
    auto out = open_out(dir / "timing.json");
    out << j.dump(2) << '\n';
  }
}

Summary summarize(const fs::path& dir) {
  const CsvTable windows = read_csv(dir / "output_rate.csv");
  const CsvTable transfers = read_csv(dir / "bandwidth_bitwidth.csv");
  const CsvTable accuracy = read_csv(dir / "accuracy.csv");
  const CsvTable events = read_csv(dir / "events.csv");
  if (windows.rows.empty()) {
    throw Error("no output-rate windows in " + dir.string());
  }

  // Rate changes per channel; phase boundaries are the union of their times.
  std::map<std::size_t, std::vector<std::pair<double, double>>> rates;
  std::vector<double> bounds;
  {
    const auto c_time = events.column("time");
    const auto c_chan = events.column("channel");
    const auto c_bytes = events.column("bytes");
    const auto c_type = events.column("event_type");
    for (const auto& r : events.rows) {
      if (r[c_type] != "rate_change") {
        continue;
      }
      const double t = to_double(r[c_time], "events.csv");
      const auto ch = static_cast<std::size_t>(to_double(r[c_chan], "events.csv"));
      rates[ch].emplace_back(t, to_double(r[c_bytes], "events.csv"));
      bounds.push_back(t);
    }
  }
  std::sort(bounds.begin(), bounds.end());
  bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());
  if (bounds.empty() || bounds.front() > 0.0) {
    bounds.insert(bounds.begin(), 0.0);
  }

  double run_end = 0.0;
  const auto a_time = accuracy.column("completion_sec");
  const auto a_agree = accuracy.column("agreement");
  for (const auto& r : accuracy.rows) {
    run_end = std::max(run_end, to_double(r[a_time], "accuracy.csv"));
  }

  const auto w_stage = windows.column("stage");
  const auto w_end = windows.column("t_end_sec");
  const auto w_rate = windows.column("output_rate");
  const auto t_stage = transfers.column("stage");
  const auto t_start = transfers.column("tx_start_sec");
  const auto t_bits = transfers.column("bitwidth");

  std::size_t n_links = 0;
  for (const auto& r : transfers.rows) {
    n_links = std::max(n_links,
                       static_cast<std::size_t>(to_double(r[t_stage], "transfers")) + 1);
  }

  Summary s;
  s.timelines.resize(n_links);
  for (const auto& r : transfers.rows) {
    const auto k = static_cast<std::size_t>(to_double(r[t_stage], "transfers"));
    const int q = static_cast<int>(to_double(r[t_bits], "transfers"));
    auto& tl = s.timelines[k];
    if (tl.empty() || tl.back() != q) {
      tl.push_back(q);
    }
  }

  // Links report their own output; a single-stage run reports the sink.
  const std::size_t stages = std::max<std::size_t>(n_links, 1);
  for (std::size_t p = 0; p < bounds.size(); ++p) {
    const double lo = bounds[p];
    const double hi = p + 1 < bounds.size() ? bounds[p + 1] : std::max(run_end, lo);
    const bool last = p + 1 == bounds.size();
    auto in_phase = [&](double t) { return t >= lo && (last ? t <= hi : t < hi); };

    std::size_t completed = 0;
    double agree_sum = 0.0;
    for (const auto& r : accuracy.rows) {
      if (in_phase(to_double(r[a_time], "accuracy.csv"))) {
        ++completed;
        agree_sum += to_double(r[a_agree], "accuracy.csv");
      }
    }

    for (std::size_t k = 0; k < stages; ++k) {
      PhaseRow row;
      row.phase = p;
      row.stage = k;
      row.start = lo;
      row.end = hi;
      const auto it = rates.find(k);
      if (it != rates.end()) {
        for (const auto& [t, bps] : it->second) {
          if (t <= lo) {
            row.mbps = netsim::bytes_per_sec_to_mbps(bps);
          }
        }
      }
      double sum = 0.0;
      for (const auto& r : windows.rows) {
        if (static_cast<std::size_t>(to_double(r[w_stage], "windows")) != k ||
            !in_phase(to_double(r[w_end], "windows"))) {
          continue;
        }
        const double rate = to_double(r[w_rate], "windows");
        sum += rate;
        row.last_rate = rate;
        ++row.windows;
      }
      if (row.windows > 0) {
        row.mean_rate = sum / static_cast<double>(row.windows);
      }
      for (const auto& r : transfers.rows) {
        if (static_cast<std::size_t>(to_double(r[t_stage], "transfers")) == k &&
            in_phase(to_double(r[t_start], "transfers"))) {
          row.steady_bitwidth = static_cast<int>(to_double(r[t_bits], "transfers"));
        }
      }
      row.completed = completed;
      if (completed > 0) {
        row.agreement = agree_sum / static_cast<double>(completed);
      }
      s.phases.push_back(row);
    }
  }

  const fs::path timing = dir / "timing.json";
  if (fs::exists(timing)) {
    std::ifstream in(timing);
    try {
      const auto j = nlohmann::json::parse(in);
      const double search = j.at("search_seconds").get<double>();
      const double host = j.at("compute_seconds").get<double>() +
                          j.at("compress_seconds").get<double>();
      if (host > 0.0) {
        s.search_share = search / host;
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error("bad timing.json: " + std::string(e.what()));
    }
  }
  return s;
}

void write_phases_csv(std::ostream& out, const Summary& s) {
  CsvWriter w(out);
  w.row({"phase", "stage", "start_sec", "end_sec", "link_mbps", "windows",
         "mean_rate", "last_window_rate", "steady_bitwidth", "completed",
         "agreement"});
  for (const auto& p : s.phases) {
    w.row({std::to_string(p.phase), std::to_string(p.stage), num(p.start),
           num(p.end), num(p.mbps, 3), std::to_string(p.windows),
           opt(p.mean_rate), opt(p.last_rate),
           p.steady_bitwidth ? std::to_string(*p.steady_bitwidth) : "",
           std::to_string(p.completed), opt(p.agreement)});
  }
}

std::string join_timeline(std::span<const int> seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i > 0) {
      out += '>';
    }
    out += std::to_string(seq[i]);
  }
  return out;
}

void print_summary(std::ostream& out, const Summary& s) {
  char line[256];
  std::snprintf(line, sizeof(line), "%-5s %-5s %10s %10s %9s %7s %9s %4s %9s\n",
                "phase", "stage", "start_s", "end_s", "mbps", "windows",
                "mean_rate", "q", "agreement");
  out << line;
  for (const auto& p : s.phases) {
    std::snprintf(line, sizeof(line),
                  "%-5zu %-5zu %10.2f %10.2f %9.1f %7zu %9s %4s %9s\n", p.phase,
                  p.stage, p.start, p.end, p.mbps, p.windows,
                  p.mean_rate ? num(*p.mean_rate, 2).c_str() : "-",
                  p.steady_bitwidth ? std::to_string(*p.steady_bitwidth).c_str()
                                    : "-",
                  p.agreement ? num(*p.agreement, 4).c_str() : "-");
    out << line;
  }
  for (std::size_t k = 0; k < s.timelines.size(); ++k) {
    out << "bitwidth timeline stage " << k << ": " << join_timeline(s.timelines[k])
        << '\n';
  }
  if (s.search_share) {
    out << "directed search share of host compute: " << num(*s.search_share * 100.0, 2)
        << "%\n";
  }
}

}  // namespace qpipe::app
