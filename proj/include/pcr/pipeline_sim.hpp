/* Copyright 2026 The PCR Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Discrete-event model of a record loader feeding a compute unit through a
// bounded prefetch queue, with reads throttled by a per-node token bucket.
//
// Events per record k on one node (virtual clock, integer nanoseconds):
//   fetch_start   = max(fetch_end[k-1], compute_end[k-depth])   loader + free slot
//   fetch_end     = when the bucket has paid out size[k] bytes
//   compute_start = max(fetch_end[k], compute_end[k-1])
//   compute_end   = compute_start + images_per_record / X_c
// Nodes do not interact; cluster throughput is the sum over nodes.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pcr/csv.hpp"
#include "pcr/error.hpp"
#include "pcr/perf_model.hpp"

namespace pcr::sim {

using Nanos = std::int64_t;
inline constexpr Nanos kNanosPerSecond = 1'000'000'000;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline Nanos seconds_to_nanos(double s) {
  if (!std::isfinite(s)) fail(Errc::ConfigInvalid, "duration is not finite");
  return static_cast<Nanos>(std::ceil(s * static_cast<double>(kNanosPerSecond)));
}

inline double nanos_to_seconds(Nanos t) { return static_cast<double>(t) / kNanosPerSecond; }

struct TokenBucketParams {
  double rate = kInf;        // bytes/second; +inf disables throttling
  double capacity_s = 1.0;   // burst size, in seconds of `rate`
  double initial_fill = 1.0; // fraction of capacity available at t = 0
};

/// Tokens accrue at `rate` up to `capacity` and are traded one per byte.
/// A request larger than the balance drains it and then waits for the
/// remainder to accrue, so large reads proceed at exactly `rate`.
class TokenBucket {
 public:
  explicit TokenBucket(const TokenBucketParams& p)
      : rate_(p.rate), capacity_(std::isinf(p.rate) ? kInf : p.rate * p.capacity_s) {
    tokens_ = std::isinf(capacity_) ? kInf : capacity_ * p.initial_fill;
  }

  /// Starts a read of `bytes` at `now`; returns the time the last byte is paid for.
  Nanos acquire(Nanos now, double bytes) {
    refill(now);
    if (std::isinf(rate_) || tokens_ >= bytes) {
      if (!std::isinf(rate_)) tokens_ -= bytes;
      return now;
    }
    const double deficit = bytes - tokens_;
    const auto wait = static_cast<Nanos>(std::ceil(deficit / rate_ * kNanosPerSecond));
    const Nanos done = now + wait;
    // Tokens that accrued during the wait beyond the deficit (rounding only).
    tokens_ = std::min(capacity_, rate_ * nanos_to_seconds(wait) - deficit);
    tokens_ = std::max(0.0, tokens_);
    last_refill_ = done;
    return done;
  }

  double tokens() const noexcept { return tokens_; }
  double capacity() const noexcept { return capacity_; }
  double rate() const noexcept { return rate_; }

 private:
  void refill(Nanos now) {
    if (now > last_refill_ && !std::isinf(rate_)) {
      tokens_ = std::min(capacity_, tokens_ + rate_ * nanos_to_seconds(now - last_refill_));
    }
    last_refill_ = std::max(last_refill_, now);
  }

  double rate_;
  double capacity_;
  double tokens_ = 0;
  Nanos last_refill_ = 0;
};

struct SimConfig {
  std::size_t n_nodes = 1;
  TokenBucketParams bucket;            // per node
  std::vector<double> image_sizes;     // mean cumulative bytes per image, [g - 1]
  std::size_t scan_group = 1;
  std::size_t images_per_record = 1024;
  double compute_rate = kInf;          // images/second per node
  std::size_t prefetch_depth = 2;
  std::size_t batches = 200;           // records per node; ignored when duration_s > 0
  double duration_s = 0;               // simulate until this much virtual time passes
  std::size_t warmup_batches = 20;     // excluded from steady-state rates
  double size_jitter = 0;              // relative spread of record sizes (uniform, same mean)
  double record_overhead_bytes = 0;    // constant extra bytes per record read
  std::uint64_t seed = 1;
  std::uint64_t dataset_images = 0;    // for epoch projection; 0 = unknown

  double record_bytes() const {
    return image_sizes.at(scan_group - 1) * static_cast<double>(images_per_record) +
           record_overhead_bytes;
  }

  void validate() const {
    auto bad = [](const std::string& what) { fail(Errc::ConfigInvalid, what); };
    if (n_nodes == 0) bad("nodes must be positive");
    if (!(bucket.rate > 0)) bad("bandwidth must be positive");
    if (!(bucket.capacity_s > 0)) bad("bucket capacity must be positive");
    if (!(bucket.initial_fill >= 0 && bucket.initial_fill <= 1)) bad("initial_fill must be in [0, 1]");
    if (image_sizes.empty()) bad("image_sizes is empty");
    for (double s : image_sizes) {
      if (!(s > 0) || !std::isfinite(s)) bad("image sizes must be positive and finite");
    }
    if (scan_group == 0 || scan_group > image_sizes.size()) bad("scan_group outside image_sizes");
    if (images_per_record == 0) bad("images_per_record must be positive");
    if (!(compute_rate > 0)) bad("compute_rate must be positive");
    if (std::isinf(compute_rate) && std::isinf(bucket.rate)) bad("bandwidth and compute rate are both unbounded");
    if (prefetch_depth == 0) bad("prefetch_depth must be positive");
    if (duration_s < 0 || !std::isfinite(duration_s)) bad("duration_s must be finite and non-negative");
    if (duration_s == 0 && batches <= warmup_batches) bad("batches must exceed warmup_batches");
    if (!(size_jitter >= 0 && size_jitter < 1)) bad("size_jitter must be in [0, 1)");
    if (record_overhead_bytes < 0) bad("record_overhead_bytes must be non-negative");
  }
};

struct BatchTiming {
  std::size_t node = 0;
  std::size_t record = 0;
  double bytes = 0;
  Nanos fetch_start = 0;
  Nanos fetch_end = 0;
  Nanos compute_start = 0;
  Nanos compute_end = 0;
  Nanos stall = 0;
};

struct SimTrace {
  std::vector<BatchTiming> batches;     // node-major, record order within a node
  std::vector<double> node_images_per_sec;
  double images_per_sec = 0;            // steady state, summed over nodes
  Nanos total_stall = 0;                // steady-state window, summed over nodes
  double stall_fraction = 0;            // stall time / window time, averaged over nodes
  Nanos end_time = 0;                   // last compute_end over all nodes
  std::vector<double> node_bytes;       // bytes fetched per node
};

namespace detail {

// Record-size multiplier from raw generator bits, portable across standard
// libraries: uniform on [1 - a, 1 + a] with a = jitter * sqrt(3), giving a
// relative standard deviation of `jitter`.
inline double jitter_factor(std::mt19937_64& rng, double jitter) {
  if (jitter == 0) return 1.0;
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  const double a = std::min(jitter * std::sqrt(3.0), 0.999);
  return 1.0 - a + 2.0 * a * u;
}

inline void simulate_node(const SimConfig& cfg, std::size_t node, SimTrace& trace) {
  TokenBucket bucket(cfg.bucket);
  std::mt19937_64 rng(cfg.seed + 0x9E3779B97F4A7C15ull * node);
  const double mean_bytes = cfg.record_bytes();
  const Nanos compute_ns = std::isinf(cfg.compute_rate)
                               ? 0
                               : seconds_to_nanos(static_cast<double>(cfg.images_per_record) / cfg.compute_rate);
  const Nanos horizon = cfg.duration_s > 0 ? seconds_to_nanos(cfg.duration_s) : 0;

  std::vector<Nanos> compute_end;
  Nanos prev_fetch_end = 0;
  Nanos prev_compute_end = 0;
  double bytes_total = 0;
  const std::size_t first = trace.batches.size();
  std::size_t drained = 0;  // batches fetched before the initial burst ran out

  for (std::size_t k = 0;; ++k) {
    if (horizon == 0 && k == cfg.batches) break;
    if (horizon > 0 && prev_compute_end >= horizon) break;
    BatchTiming b;
    b.node = node;
    b.record = k;
    b.bytes = mean_bytes * jitter_factor(rng, cfg.size_jitter);
    b.fetch_start = prev_fetch_end;
    if (k >= cfg.prefetch_depth) b.fetch_start = std::max(b.fetch_start, compute_end[k - cfg.prefetch_depth]);
    b.fetch_end = bucket.acquire(b.fetch_start, b.bytes);
    if (drained == 0 && b.fetch_end > b.fetch_start) drained = k + 1;
    b.compute_start = std::max(b.fetch_end, prev_compute_end);
    b.compute_end = b.compute_start + compute_ns;
    b.stall = std::max<Nanos>(0, b.fetch_end - prev_compute_end);
    prev_fetch_end = b.fetch_end;
    prev_compute_end = b.compute_end;
    compute_end.push_back(b.compute_end);
    bytes_total += b.bytes;
    trace.batches.push_back(b);
  }

  const std::size_t count = trace.batches.size() - first;
  // Duration-bounded runs may be too short for the configured warm-up.
  // The window also skips the initial token burst.
  const std::size_t warm = std::min(std::max(cfg.warmup_batches, drained), count > 1 ? count - 1 : 0);
  const Nanos window_start = warm == 0 ? 0 : compute_end[warm - 1];
  const Nanos window = compute_end.back() - window_start;
  Nanos stall = 0;
  for (std::size_t k = warm; k < count; ++k) stall += trace.batches[first + k].stall;
  const double images = static_cast<double>((count - warm) * cfg.images_per_record);
  const double rate = window > 0 ? images / nanos_to_seconds(window) : kInf;

  trace.node_images_per_sec.push_back(rate);
  trace.node_bytes.push_back(bytes_total);
  trace.images_per_sec += rate;
  trace.total_stall += stall;
  trace.stall_fraction += window > 0 ? static_cast<double>(stall) / static_cast<double>(window) : 0.0;
  trace.end_time = std::max(trace.end_time, compute_end.back());
}

}  // namespace detail

inline SimTrace simulate(const SimConfig& cfg) {
  cfg.validate();
  SimTrace trace;
  for (std::size_t node = 0; node < cfg.n_nodes; ++node) detail::simulate_node(cfg, node, trace);
  trace.stall_fraction /= static_cast<double>(cfg.n_nodes);
  return trace;
}

/// Steady-state projection: epochs * dataset_images / trace rate.
inline double project_time_to_epoch(const SimTrace& trace, std::uint64_t dataset_images, double n_epochs = 1) {
  if (dataset_images == 0) fail(Errc::InvalidArgument, "dataset size unknown");
  return n_epochs * static_cast<double>(dataset_images) / trace.images_per_sec;
}

inline double project_time_to_epoch(const SimConfig& cfg, double n_epochs = 1) {
  return project_time_to_epoch(simulate(cfg), cfg.dataset_images, n_epochs);
}

/// Mean cumulative per-image sizes as the simulator expects them.
inline std::vector<double> image_sizes_from_stats(const SizeStats& stats) { return stats.per_group_mean; }

struct SweepGrid {
  SimConfig base;
  std::vector<double> bandwidths;  // aggregate bytes/second, split evenly over nodes
  std::vector<std::size_t> scan_groups;
};

struct SweepRow {
  double bandwidth = 0;
  std::size_t scan_group = 0;
  double images_per_sec = 0;
  double stall_fraction = 0;
  double epoch_seconds = 0;
  std::string error;  // empty on success
};

/// One simulation per (bandwidth, scan group) cell, bandwidth-major. A cell
/// that fails keeps its row with NaN metrics and the error text.
inline std::vector<SweepRow> sweep(const SweepGrid& grid) {
  std::vector<SweepRow> rows;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (double bw : grid.bandwidths) {
    for (std::size_t g : grid.scan_groups) {
      SweepRow row{bw, g, nan, nan, nan, {}};
      try {
        SimConfig cfg = grid.base;
        cfg.bucket.rate = bw / static_cast<double>(cfg.n_nodes);
        cfg.scan_group = g;
        const SimTrace t = simulate(cfg);
        row.images_per_sec = t.images_per_sec;
        row.stall_fraction = t.stall_fraction;
        row.epoch_seconds = cfg.dataset_images > 0 ? project_time_to_epoch(t, cfg.dataset_images) : nan;
      } catch (const Error& e) {
        row.error = e.what();
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  csv::row(os, {"bandwidth", "scan_group", "images_per_sec", "stall_fraction", "epoch_seconds"});
  for (const auto& r : rows) {
    csv::row(os, {csv::num(r.bandwidth), csv::num(std::uint64_t{r.scan_group}), csv::num(r.images_per_sec),
                  csv::num(r.stall_fraction), csv::num(r.epoch_seconds)});
  }
}

inline void write_trace_csv(std::ostream& os, const SimTrace& trace) {
  csv::row(os, {"node", "record", "bytes", "fetch_start_ns", "fetch_end_ns", "compute_start_ns",
                "compute_end_ns", "stall_ns"});
  for (const auto& b : trace.batches) {
    csv::row(os, {csv::num(std::uint64_t{b.node}), csv::num(std::uint64_t{b.record}), csv::num(b.bytes),
                  csv::num(std::int64_t{b.fetch_start}), csv::num(std::int64_t{b.fetch_end}),
                  csv::num(std::int64_t{b.compute_start}), csv::num(std::int64_t{b.compute_end}),
                  csv::num(std::int64_t{b.stall})});
  }
}

// ---------------------------------------------------------------------------
// Config files: one `key = value` per line, `#` starts a comment. Byte
// quantities accept K/M/G (powers of 1000) and KiB/MiB/GiB suffixes, with an
// optional trailing "/s"; rates accept "inf".

inline double parse_quantity(std::string text) {
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  text = trim(text);
  if (text.size() > 2 && text.ends_with("/s")) text = trim(text.substr(0, text.size() - 2));
  if (text == "inf" || text == "infinity") return kInf;
  static const std::pair<const char*, double> kSuffixes[] = {
      {"KiB", 1024.0}, {"MiB", 1024.0 * 1024}, {"GiB", 1024.0 * 1024 * 1024},
      {"kB", 1e3},     {"KB", 1e3},            {"k", 1e3},            {"MB", 1e6},
      {"GB", 1e9},     {"K", 1e3},             {"M", 1e6},
      {"G", 1e9},      {"B", 1.0}};
  double mult = 1.0;
  for (const auto& [suffix, m] : kSuffixes) {
    if (text.ends_with(suffix)) {
      mult = m;
      text = trim(text.substr(0, text.size() - std::string(suffix).size()));
      break;
    }
  }
  double v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    fail(Errc::ConfigInvalid, "not a number: '" + text + "'");
  }
  return v * mult;
}

inline std::vector<double> parse_quantity_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_quantity(item));
  return out;
}

inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(Errc::ConfigInvalid, "line " + std::to_string(lineno) + ": missing '='");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail(Errc::ConfigInvalid, "line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

/// Reads `image_sizes` back from a stats CSV (group, cumulative_mean_bytes, ...).
inline std::vector<double> read_image_sizes_csv(std::istream& in) {
  std::vector<double> sizes;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string group, mean;
    std::getline(ss, group, ',');
    std::getline(ss, mean, ',');
    sizes.push_back(parse_quantity(mean));
  }
  return sizes;
}

/// Sweep grid from a config file. Recognized keys:
///   nodes, bandwidth (aggregate), bandwidths (sweep list), bucket_capacity_s,
///   initial_fill, image_sizes (list) or stats_csv (path), scan_group,
///   scan_groups (sweep list), images_per_record, compute_rate, prefetch_depth,
///   batches, duration_s, warmup_batches, size_jitter, record_overhead_bytes,
///   seed, dataset_images
inline SweepGrid parse_sim_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
  const auto kv = parse_key_values(in);
  SweepGrid grid;
  SimConfig& c = grid.base;
  auto to_size = [](const std::string& key, const std::string& v) {
    const double d = parse_quantity(v);
    if (d < 0 || d != std::floor(d) || !std::isfinite(d)) fail(Errc::ConfigInvalid, key + " must be a whole number");
    return static_cast<std::size_t>(d);
  };
  double bandwidth = 0;
  bool have_bandwidth = false;
  for (const auto& [key, value] : kv) {
    if (key == "nodes") c.n_nodes = to_size(key, value);
    else if (key == "bandwidth") { bandwidth = parse_quantity(value); have_bandwidth = true; }
    else if (key == "bandwidths") grid.bandwidths = parse_quantity_list(value);
    else if (key == "bucket_capacity_s") c.bucket.capacity_s = parse_quantity(value);
    else if (key == "initial_fill") c.bucket.initial_fill = parse_quantity(value);
    else if (key == "image_sizes") c.image_sizes = parse_quantity_list(value);
    else if (key == "stats_csv") {
      std::filesystem::path p(value);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      std::ifstream f(p);
      if (!f) fail(Errc::ConfigInvalid, "cannot open stats_csv " + p.string());
      c.image_sizes = read_image_sizes_csv(f);
    }
    else if (key == "scan_group") c.scan_group = to_size(key, value);
    else if (key == "scan_groups") {
      for (double g : parse_quantity_list(value)) grid.scan_groups.push_back(to_size(key, csv::num(g)));
    }
    else if (key == "images_per_record") c.images_per_record = to_size(key, value);
    else if (key == "compute_rate") c.compute_rate = parse_quantity(value);
    else if (key == "prefetch_depth") c.prefetch_depth = to_size(key, value);
    else if (key == "batches") c.batches = to_size(key, value);
    else if (key == "duration_s") c.duration_s = parse_quantity(value);
    else if (key == "warmup_batches") c.warmup_batches = to_size(key, value);
    else if (key == "size_jitter") c.size_jitter = parse_quantity(value);
    else if (key == "record_overhead_bytes") c.record_overhead_bytes = parse_quantity(value);
    else if (key == "seed") c.seed = to_size(key, value);
    else if (key == "dataset_images") c.dataset_images = to_size(key, value);
    else fail(Errc::ConfigInvalid, "unknown key '" + key + "'");
  }
  if (have_bandwidth) c.bucket.rate = bandwidth / static_cast<double>(std::max<std::size_t>(c.n_nodes, 1));
  if (grid.bandwidths.empty() && have_bandwidth) grid.bandwidths = {bandwidth};
  if (grid.scan_groups.empty()) grid.scan_groups = {c.scan_group};
  return grid;
}

}  // namespace pcr::sim
