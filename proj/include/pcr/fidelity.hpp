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

// Multi-scale SSIM on BT.601 luma and per-scan-group fidelity reports.
//
// The computation follows the common reference formulation: 11x11 Gaussian
// window (sigma 1.5) applied with "valid" extent, K1 = 0.01, K2 = 0.03,
// dynamic range 255, contrast-structure terms at the first four scales and
// the full SSIM at the last, each clamped at zero and raised to the standard
// exponents. Between scales the image is 2x2 box-averaged after mirroring
// the last row/column of odd dimensions.
//
// Five scales need every dimension >= 161 px (11 px at the coarsest scale;
// 176 px keeps all scales even). Smaller images use as many leading scales as
// fit, with their exponents rescaled to sum to one. Below 11 px: TooSmall.

#include <algorithm>
#include <atomic>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "pcr/codec.hpp"
#include "pcr/csv.hpp"
#include "pcr/error.hpp"
#include "pcr/image.hpp"
#include "pcr/perf_model.hpp"
#include "pcr/reader.hpp"

namespace pcr {

inline constexpr std::array<double, 5> kMssimWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

namespace detail {

inline std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> taps{};
  double sum = 0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - (kSsimWindow - 1) / 2.0;
    taps[i] = std::exp(-0.5 * d * d / (kSsimSigma * kSsimSigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

// Separable Gaussian filter, output (w - 10) x (h - 10).
inline Plane filter_valid(const Plane& in) {
  static const auto taps = gaussian_taps();
  const std::size_t ow = in.width - kSsimWindow + 1;
  const std::size_t oh = in.height - kSsimWindow + 1;
  Plane rows(ow, in.height);
  for (std::size_t y = 0; y < in.height; ++y) {
    const double* src = &in.values[y * in.width];
    double* dst = &rows.values[y * ow];
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) acc += taps[k] * src[x + k];
      dst[x] = acc;
    }
  }
  Plane out(ow, oh);
  for (std::size_t y = 0; y < oh; ++y) {
    double* dst = &out.values[y * ow];
    for (std::size_t k = 0; k < kSsimWindow; ++k) {
      const double t = taps[k];
      const double* src = &rows.values[(y + k) * ow];
      for (std::size_t x = 0; x < ow; ++x) dst[x] += t * src[x];
    }
  }
  return out;
}

inline Plane downsample2(const Plane& in) {
  const std::size_t ow = (in.width + 1) / 2;
  const std::size_t oh = (in.height + 1) / 2;
  Plane out(ow, oh);
  auto px = [&](std::size_t x, std::size_t y) {
    return in(std::min(x, in.width - 1), std::min(y, in.height - 1));
  };
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      out(x, y) = (px(2 * x, 2 * y) + px(2 * x + 1, 2 * y) + px(2 * x, 2 * y + 1) + px(2 * x + 1, 2 * y + 1)) / 4.0;
    }
  }
  return out;
}

struct SsimTerms {
  double ssim = 0;
  double cs = 0;
};

inline SsimTerms ssim_terms(const Plane& a, const Plane& b) {
  constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);
  Plane sq_sum(a.width, a.height);
  Plane cross(a.width, a.height);
  for (std::size_t k = 0; k < a.values.size(); ++k) {
    sq_sum.values[k] = a.values[k] * a.values[k] + b.values[k] * b.values[k];
    cross.values[k] = a.values[k] * b.values[k];
  }
  const Plane mu_a = filter_valid(a);
  const Plane mu_b = filter_valid(b);
  const Plane e_sq = filter_valid(sq_sum);
  const Plane e_cross = filter_valid(cross);
  double ssim_sum = 0;
  double cs_sum = 0;
  for (std::size_t k = 0; k < mu_a.values.size(); ++k) {
    const double num0 = mu_a.values[k] * mu_b.values[k] * 2.0;
    const double den0 = mu_a.values[k] * mu_a.values[k] + mu_b.values[k] * mu_b.values[k];
    const double lum = (num0 + kC1) / (den0 + kC1);
    const double cs = (e_cross.values[k] * 2.0 - num0 + kC2) / (e_sq.values[k] - den0 + kC2);
    ssim_sum += lum * cs;
    cs_sum += cs;
  }
  const auto n = static_cast<double>(mu_a.values.size());
  return {ssim_sum / n, cs_sum / n};
}

}  // namespace detail

/// Number of dyadic scales that fit an image of the given size (0..5).
inline std::size_t mssim_scales(std::size_t width, std::size_t height) {
  std::size_t scales = 0;
  while (scales < kMssimWeights.size() && width >= kSsimWindow && height >= kSsimWindow) {
    ++scales;
    width = (width + 1) / 2;
    height = (height + 1) / 2;
  }
  return scales;
}

/// MS-SSIM of two luma planes on the 0..255 scale.
inline double mssim(const Plane& a, const Plane& b) {
  if (a.width != b.width || a.height != b.height) {
    fail(Errc::DimensionMismatch, std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                                      std::to_string(b.width) + "x" + std::to_string(b.height));
  }
  const std::size_t scales = mssim_scales(a.width, a.height);
  if (scales == 0) fail(Errc::TooSmall, "images need at least 11x11 pixels");
  if (a.values == b.values) return 1.0;

  double weight_sum = 0;
  for (std::size_t s = 0; s < scales; ++s) weight_sum += kMssimWeights[s];
  const double renorm = scales == kMssimWeights.size() ? 1.0 : 1.0 / weight_sum;

  Plane x = a;
  Plane y = b;
  double result = 1.0;
  for (std::size_t s = 0; s < scales; ++s) {
    if (s > 0) {
      x = detail::downsample2(x);
      y = detail::downsample2(y);
    }
    const detail::SsimTerms t = detail::ssim_terms(x, y);
    const double term = std::max(0.0, s + 1 == scales ? t.ssim : t.cs);
    result *= std::pow(term, kMssimWeights[s] * renorm);
  }
  return result;
}

/// MS-SSIM of two RGB8 images, compared on BT.601 luma.
inline double mssim(const Rgb8Image& a, const Rgb8Image& b) {
  if (a.width != b.width || a.height != b.height) {
    fail(Errc::DimensionMismatch, std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                                      std::to_string(b.width) + "x" + std::to_string(b.height));
  }
  if (a.pixels == b.pixels) {
    if (mssim_scales(a.width, a.height) == 0) fail(Errc::TooSmall, "images need at least 11x11 pixels");
    return 1.0;
  }
  return mssim(luminance(a), luminance(b));
}

// ---------------------------------------------------------------------------

struct GroupFidelity {
  double mean = 0;
  Quartiles quartiles;
};

struct MssimReport {
  std::vector<GroupFidelity> per_group_mssim;  // [g - 1]
  std::size_t n_images = 0;                    // images that entered the aggregates
  std::size_t n_failed = 0;
  std::vector<std::string> failures;           // "<record>#<index>: message"
  /// Raw per-image scores, [image][g - 1].
  std::vector<std::vector<double>> per_image;
};

using Decoder = std::function<Rgb8Image(ByteView)>;

inline Decoder default_decoder() {
  return [](ByteView bytes) { return decode_rgb8(bytes); };
}

struct ReportOptions {
  std::size_t threads = 1;
  std::size_t max_images = 0;  // 0 = all
};

/// Per-image MS-SSIM of every scan group against the full-fidelity decode.
inline std::vector<double> mssim_per_group(const PrefixData& prefix, std::size_t image_i, const Decoder& decode) {
  const std::size_t G = prefix.meta.index.n_groups;
  const Rgb8Image full = decode(assemble(prefix, image_i, G).jpeg_bytes);
  std::vector<double> scores(G);
  for (std::size_t g = 1; g <= G; ++g) {
    scores[g - 1] = g == G ? mssim(full, full) : mssim(decode(assemble(prefix, image_i, g).jpeg_bytes), full);
  }
  return scores;
}

/// Reads each record once at full fidelity and scores every image at every
/// group. Decode or metric failures are listed and left out of the aggregates.
inline MssimReport report(std::span<const std::filesystem::path> records, const Decoder& decode = default_decoder(),
                          ReportOptions opts = {}) {
  MssimReport rep;
  std::size_t G = 0;
  for (const auto& file : records) {
    FileSource src(file);
    const auto idx = read_index(static_cast<const RandomAccessSource&>(src)).index;
    if (G == 0) G = idx.n_groups;
    if (idx.n_groups != G) fail(Errc::InvalidArgument, "records disagree on group count");

    FileSource seq(file);
    const PrefixData prefix = read_prefix(seq, {G});
    std::size_t n = prefix.n_images();
    if (opts.max_images > 0) {
      const std::size_t left = opts.max_images > rep.per_image.size() + rep.n_failed
                                   ? opts.max_images - rep.per_image.size() - rep.n_failed
                                   : 0;
      n = std::min(n, left);
    }

    std::vector<std::vector<double>> scores(n);
    std::vector<std::string> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          scores[i] = mssim_per_group(prefix, i, decode);
        } catch (const std::exception& e) {
          errors[i] = file.filename().string() + "#" + std::to_string(i) + ": " + e.what();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::max<std::size_t>(opts.threads, 1); ++t) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();

    for (std::size_t i = 0; i < n; ++i) {
      if (errors[i].empty()) {
        rep.per_image.push_back(std::move(scores[i]));
      } else {
        ++rep.n_failed;
        rep.failures.push_back(std::move(errors[i]));
      }
    }
  }

  rep.n_images = rep.per_image.size();
  rep.per_group_mssim.resize(G);
  for (std::size_t g = 0; g < G && rep.n_images > 0; ++g) {
    std::vector<double> col;
    col.reserve(rep.n_images);
    double sum = 0;
    for (const auto& row : rep.per_image) {
      col.push_back(row[g]);
      sum += row[g];
    }
    rep.per_group_mssim[g].mean = sum / static_cast<double>(rep.n_images);
    rep.per_group_mssim[g].quartiles = quartiles(std::move(col));
  }
  return rep;
}

/// Column order: group, mean_mssim, q25, q75.
inline void write_report_csv(std::ostream& os, const MssimReport& rep) {
  csv::row(os, {"group", "mean_mssim", "q25", "q75"});
  for (std::size_t g = 1; g <= rep.per_group_mssim.size(); ++g) {
    const auto& f = rep.per_group_mssim[g - 1];
    csv::row(os, {csv::num(std::uint64_t{g}), csv::num(f.mean), csv::num(f.quartiles.q25),
                  csv::num(f.quartiles.q75)});
  }
}

struct LinearFit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};

/// Ordinary least squares y = slope * x + intercept, e.g. accuracy against
/// mean MS-SSIM for externally measured runs.
inline LinearFit fit_linear(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) fail(Errc::InvalidArgument, "need at least two paired points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0) fail(Errc::InvalidArgument, "x values are all equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy == 0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

}  // namespace pcr
