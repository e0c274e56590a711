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

// Analytical loader throughput model.
//
// A loader that reads one record at a time at bandwidth W spends, per image,
// E[s(x,g)] / W seconds, where E[s(x,g)] is the mean cumulative size of an
// image through scan group g. With one outstanding read (a closed system)
// Little's law turns that into a rate X_g = W / E[s(x,g)]. Training runs at
// no more than min(X_c, X_g), and while data bound the gain from dropping to
// group g is the ratio of the mean sizes. Only means enter; the shape of the
// size distribution does not.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pcr/container.hpp"
#include "pcr/csv.hpp"
#include "pcr/error.hpp"
#include "pcr/io.hpp"
#include "pcr/reader.hpp"

namespace pcr {

struct Quartiles {
  double q25 = 0;
  double q50 = 0;
  double q75 = 0;

  double iqr() const noexcept { return q75 - q25; }
};

struct SizeStats {
  std::vector<double> per_group_mean;  // [g - 1]: cumulative bytes through group g
  double baseline_mean = 0;            // mean original file size
  std::size_t n_samples = 0;
  std::vector<Quartiles> per_group_distribution;

  std::size_t n_groups() const noexcept { return per_group_mean.size(); }
  double mean(std::size_t g) const { return per_group_mean.at(g - 1); }
};

/// Linear-interpolation quantile (the "type 7" estimator) of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline Quartiles quartiles(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return {quantile_sorted(values, 0.25), quantile_sorted(values, 0.5), quantile_sorted(values, 0.75)};
}

/// Per-group cumulative size statistics from record indices alone.
inline SizeStats collect_stats(std::span<const PcrIndex> indices) {
  if (indices.empty()) fail(Errc::InvalidArgument, "collect_stats needs at least one record");
  const std::size_t G = indices.front().n_groups;
  std::size_t n = 0;
  for (const auto& idx : indices) {
    if (idx.n_groups != G) fail(Errc::InvalidArgument, "records disagree on group count");
    n += idx.n_images;
  }

  // cumulative[g-1][k]: image k's bytes through group g
  std::vector<std::vector<double>> cumulative(G, std::vector<double>(n));
  std::size_t k0 = 0;
  for (const auto& idx : indices) {
    for (std::size_t i = 0; i < idx.n_images; ++i) {
      std::uint64_t running = 0;
      for (std::size_t g = 1; g <= G; ++g) {
        running += idx.length(g, i);
        cumulative[g - 1][k0 + i] = static_cast<double>(running);
      }
    }
    k0 += idx.n_images;
  }

  SizeStats s;
  s.n_samples = n;
  s.per_group_mean.resize(G);
  s.per_group_distribution.resize(G);
  for (std::size_t g = 0; g < G; ++g) {
    // Integer sums keep the means exact for any realistic corpus size.
    std::uint64_t total = 0;
    for (double v : cumulative[g]) total += static_cast<std::uint64_t>(v);
    s.per_group_mean[g] = static_cast<double>(total) / static_cast<double>(n);
    s.per_group_distribution[g] = quartiles(cumulative[g]);
  }
  s.baseline_mean = s.per_group_mean.back();
  return s;
}

/// Reads only the index region of each record file.
inline SizeStats collect_stats(std::span<const std::filesystem::path> files) {
  std::vector<PcrIndex> indices;
  indices.reserve(files.size());
  for (const auto& f : files) {
    FileSource src(f);
    indices.push_back(read_index(static_cast<const RandomAccessSource&>(src)).index);
  }
  return collect_stats(indices);
}

/// Column order: group, cumulative_mean_bytes, q25, q50, q75.
inline void write_stats_csv(std::ostream& os, const SizeStats& s) {
  csv::row(os, {"group", "cumulative_mean_bytes", "q25", "q50", "q75"});
  for (std::size_t g = 1; g <= s.n_groups(); ++g) {
    const auto& q = s.per_group_distribution[g - 1];
    csv::row(os, {csv::num(std::uint64_t{g}), csv::num(s.mean(g)), csv::num(q.q25), csv::num(q.q50),
                  csv::num(q.q75)});
  }
}

struct ThroughputModel {
  double bandwidth = 0;     // W, bytes/second
  double compute_rate = 0;  // X_c, images/second (may be +inf)
  SizeStats stats;
  /// Fixed cost per record read (seek, open), seconds. Zero reproduces the
  /// large-record limit exactly.
  double record_overhead_s = 0;
  std::size_t images_per_record = 1;

  void validate() const {
    if (!(bandwidth > 0)) fail(Errc::InvalidArgument, "bandwidth must be positive");
    if (!(compute_rate > 0)) fail(Errc::InvalidArgument, "compute rate must be positive");
    if (record_overhead_s < 0) fail(Errc::InvalidArgument, "record overhead must be non-negative");
    if (images_per_record == 0) fail(Errc::InvalidArgument, "images_per_record must be positive");
    if (stats.n_groups() == 0) fail(Errc::InvalidArgument, "size statistics are empty");
  }
};

namespace detail {
inline void check_group(const ThroughputModel& m, std::size_t g) {
  if (g < 1 || g > m.stats.n_groups()) {
    fail(Errc::InvalidArgument, "scan group " + std::to_string(g) + " outside 1.." +
                                    std::to_string(m.stats.n_groups()));
  }
}
}  // namespace detail

/// Loader images/second at scan group g.
inline double pipeline_throughput(const ThroughputModel& m, std::size_t g) {
  detail::check_group(m, g);
  const double mean = m.stats.mean(g);
  if (m.record_overhead_s == 0) return m.bandwidth / mean;
  const double per_image_s =
      mean / m.bandwidth + m.record_overhead_s / static_cast<double>(m.images_per_record);
  return 1.0 / per_image_s;
}

/// Full-fidelity loader rate; equal to the last group's.
inline double baseline_throughput(const ThroughputModel& m) {
  return pipeline_throughput(m, m.stats.n_groups());
}

struct SystemThroughput {
  double images_per_sec = 0;
  double utilization = 0;  // of the compute unit, min(1, X_g / X_c)
  bool data_bound = false;
};

inline SystemThroughput system_throughput(const ThroughputModel& m, std::size_t g) {
  const double xg = pipeline_throughput(m, g);
  SystemThroughput out;
  out.images_per_sec = std::min(m.compute_rate, xg);
  out.utilization = std::min(1.0, xg / m.compute_rate);
  out.data_bound = xg < m.compute_rate;
  return out;
}

/// Loader speedup from switching `from_g` -> `to_g`: the ratio of mean
/// cumulative sizes. It bounds end-to-end speedup only while data bound.
inline double speedup(const ThroughputModel& m, std::size_t from_g, std::size_t to_g) {
  detail::check_group(m, from_g);
  detail::check_group(m, to_g);
  return m.stats.mean(from_g) / m.stats.mean(to_g);
}

}  // namespace pcr
