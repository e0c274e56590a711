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

// Scan-group selection by gradient agreement.
//
// With the model frozen, the loss gradient over a batch at full fidelity is
// compared with the gradient over the same batch (same labels) decoded from
// fewer scan groups. The cosine of the angle between them scores each group;
// the tuner picks the cheapest group whose score clears a threshold.
//
// The model here is multinomial logistic regression over a fixed grayscale
// thumbnail of each image, which keeps gradients exact and cheap.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcr/codec.hpp"
#include "pcr/csv.hpp"
#include "pcr/error.hpp"
#include "pcr/image.hpp"
#include "pcr/reader.hpp"

namespace pcr {

struct FeatureSpec {
  std::size_t width = 32;
  std::size_t height = 32;

  std::size_t dim() const noexcept { return width * height; }
};

/// Luma, box-resampled to the FeatureSpec grid (fractional pixel coverage),
/// scaled to [0, 1].
inline std::vector<double> featurize(const Rgb8Image& img, const FeatureSpec& spec = {}) {
  if (img.width == 0 || img.height == 0) fail(Errc::InvalidArgument, "empty image");
  const Plane luma = luminance(img);
  std::vector<double> out(spec.dim());
  const double sx = static_cast<double>(img.width) / spec.width;
  const double sy = static_cast<double>(img.height) / spec.height;
  for (std::size_t oy = 0; oy < spec.height; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (std::size_t ox = 0; ox < spec.width; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc = 0, area = 0;
      for (auto y = static_cast<std::size_t>(y0); y < img.height && static_cast<double>(y) < y1; ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        for (auto x = static_cast<std::size_t>(x0); x < img.width && static_cast<double>(x) < x1; ++x) {
          const double w = wy * (std::min<double>(x + 1, x1) - std::max<double>(x, x0));
          acc += w * luma(x, y);
          area += w;
        }
      }
      out[oy * spec.width + ox] = acc / area / 255.0;
    }
  }
  return out;
}

/// Row-major batch of feature vectors.
struct FeatureBatch {
  std::size_t dim = 0;
  std::vector<double> values;

  std::size_t size() const noexcept { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const double> row(std::size_t i) const { return std::span(values).subspan(i * dim, dim); }
  void push_back(std::span<const double> x) {
    if (dim == 0) dim = x.size();
    if (x.size() != dim) fail(Errc::ShapeMismatch, "feature length differs within batch");
    values.insert(values.end(), x.begin(), x.end());
  }
};

/// Multinomial logistic regression: logits = W x + b.
struct GradModel {
  std::size_t n_classes = 0;
  std::size_t n_features = 0;
  std::vector<double> weights;  // [class * n_features + feature]
  std::vector<double> bias;     // [class]

  GradModel() = default;
  GradModel(std::size_t classes, std::size_t features)
      : n_classes(classes), n_features(features), weights(classes * features, 0.0), bias(classes, 0.0) {}

  std::size_t n_params() const noexcept { return weights.size() + bias.size(); }
};

struct LossGrad {
  double loss = 0;
  std::vector<double> grad;  // weights (row-major) then biases
};

/// Mean cross-entropy over the batch and its exact gradient.
inline LossGrad loss_and_grad(const GradModel& model, const FeatureBatch& x, std::span<const int> labels) {
  const std::size_t n = x.size();
  const std::size_t C = model.n_classes;
  const std::size_t F = model.n_features;
  if (n == 0) fail(Errc::ShapeMismatch, "empty batch");
  if (x.dim != F) fail(Errc::ShapeMismatch, "feature length " + std::to_string(x.dim) + " != " + std::to_string(F));
  if (labels.size() != n) fail(Errc::ShapeMismatch, "label count differs from batch size");
  if (model.weights.size() != C * F || model.bias.size() != C) fail(Errc::ShapeMismatch, "model parameters malformed");

  LossGrad out;
  out.grad.assign(C * F + C, 0.0);
  std::vector<double> p(C);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= C) fail(Errc::ShapeMismatch, "label out of range");
    const auto xi = x.row(i);
    double max_logit = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) {
      double z = model.bias[c];
      const double* w = &model.weights[c * F];
      for (std::size_t f = 0; f < F; ++f) z += w[f] * xi[f];
      p[c] = z;
      max_logit = std::max(max_logit, z);
    }
    double denom = 0;
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(p[c] - max_logit);
    const double log_denom = std::log(denom) + max_logit;
    out.loss += (log_denom - p[static_cast<std::size_t>(y)]) * inv_n;
    for (std::size_t c = 0; c < C; ++c) {
      const double residual = (std::exp(p[c] - log_denom) - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) * inv_n;
      double* g = &out.grad[c * F];
      for (std::size_t f = 0; f < F; ++f) g[f] += residual * xi[f];
      out.grad[C * F + c] += residual;
    }
  }
  return out;
}

/// One full-batch gradient-descent step; returns the loss before the step.
inline double train_step(GradModel& model, const FeatureBatch& x, std::span<const int> labels, double lr) {
  const LossGrad lg = loss_and_grad(model, x, labels);
  const std::size_t nw = model.weights.size();
  for (std::size_t k = 0; k < nw; ++k) model.weights[k] -= lr * lg.grad[k];
  for (std::size_t c = 0; c < model.bias.size(); ++c) model.bias[c] -= lr * lg.grad[nw + c];
  return lg.loss;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(Errc::ShapeMismatch, "gradient lengths differ");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0 || nb == 0) fail(Errc::ZeroGradient, "gradient has zero norm");
  // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): for a == b it is exactly
  // |dot|, so identical gradients score exactly 1.
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

/// Gradient agreement between a full-fidelity batch and its reduced version
/// under the same labels and frozen parameters.
inline double score(const GradModel& model, const FeatureBatch& full, const FeatureBatch& reduced,
                    std::span<const int> labels) {
  if (full.size() != reduced.size()) fail(Errc::ShapeMismatch, "batches differ in size");
  const LossGrad a = loss_and_grad(model, full, labels);
  const LossGrad b = loss_and_grad(model, reduced, labels);
  return cosine_similarity(a.grad, b.grad);
}

// ---------------------------------------------------------------------------

/// Supplies features of image i decoded from scan groups 1..g.
class FidelityFeatureSource {
 public:
  virtual ~FidelityFeatureSource() = default;
  virtual std::size_t n_images() const = 0;
  virtual std::size_t n_groups() const = 0;
  virtual int label(std::size_t i) const = 0;
  virtual std::vector<double> features(std::size_t i, std::size_t g) const = 0;
};

/// Holds every record of a dataset in memory at full fidelity; features for
/// lower groups are decoded from prefixes of the same bytes and cached.
class PcrFeatureSource final : public FidelityFeatureSource {
 public:
  explicit PcrFeatureSource(const std::filesystem::path& path, FeatureSpec spec = {},
                            std::function<Rgb8Image(ByteView)> decode = {})
      : spec_(spec), decode_(decode ? std::move(decode) : [](ByteView b) { return decode_rgb8(b); }) {
    for (const auto& file : list_records(path)) {
      FileSource idx_src(file);
      const std::size_t G = read_index(static_cast<const RandomAccessSource&>(idx_src)).index.n_groups;
      if (groups_ == 0) groups_ = G;
      if (G != groups_) fail(Errc::InvalidArgument, "records disagree on group count");
      FileSource src(file);
      prefixes_.push_back(read_prefix(src, {G}));
      for (std::size_t i = 0; i < prefixes_.back().n_images(); ++i) {
        where_.emplace_back(prefixes_.size() - 1, i);
      }
    }
    if (where_.empty()) fail(Errc::InvalidArgument, "dataset holds no images");
  }

  std::size_t n_images() const override { return where_.size(); }
  std::size_t n_groups() const override { return groups_; }
  int label(std::size_t i) const override {
    const auto [r, k] = where_.at(i);
    return prefixes_[r].meta.metadata[k].label;
  }
  std::vector<double> features(std::size_t i, std::size_t g) const override {
    const auto key = std::make_pair(i, g);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const auto [r, k] = where_.at(i);
    auto f = featurize(decode_(assemble(prefixes_[r], k, g).jpeg_bytes), spec_);
    cache_.emplace(key, f);
    return f;
  }
  const FeatureSpec& spec() const noexcept { return spec_; }

 private:
  FeatureSpec spec_;
  std::function<Rgb8Image(ByteView)> decode_;
  std::size_t groups_ = 0;
  std::vector<PrefixData> prefixes_;
  std::vector<std::pair<std::size_t, std::size_t>> where_;
  mutable std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> cache_;
};

struct TunePolicy {
  double threshold = 0.8;
  std::size_t warmup_epochs = 5;
  std::size_t tune_interval_epochs = 20;
  std::size_t start_group = 0;    // 0 = highest group
  std::size_t batch_budget = 2560;
  std::size_t trials = 3;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(threshold > 0 && threshold <= 1)) fail(Errc::InvalidArgument, "threshold must be in (0, 1]");
    if (tune_interval_epochs == 0) fail(Errc::InvalidArgument, "tune interval must be positive");
    if (batch_budget == 0) fail(Errc::InvalidArgument, "batch budget must be positive");
    if (trials == 0) fail(Errc::InvalidArgument, "need at least one trial");
  }
};

struct SimilarityScore {
  std::vector<double> per_group_score;  // mean over trials, [g - 1]
  std::vector<double> confidence_halfwidth;
  std::size_t n_batch_images = 0;

  double lower_bound(std::size_t g) const { return per_group_score[g - 1] - confidence_halfwidth[g - 1]; }
};

/// Two-sided 95% Student-t critical value.
inline double t_critical_95(std::size_t dof) {
  static constexpr double kTable[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                      2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                                      2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (dof == 0) return 0;
  return dof <= std::size(kTable) ? kTable[dof - 1] : 1.960;
}

/// Scores every group over `trials` seeded batches of up to `batch_budget`
/// images each. Group G is scored against itself and is exactly 1.
inline SimilarityScore evaluate_groups(const GradModel& model, const FidelityFeatureSource& source,
                                       const TunePolicy& policy, std::uint64_t stream) {
  const std::size_t G = source.n_groups();
  const std::size_t N = source.n_images();
  const std::size_t batch = std::min(policy.batch_budget, N);
  std::vector<std::vector<double>> per_trial(G, std::vector<double>(policy.trials));

  std::vector<std::size_t> order(N);
  for (std::size_t t = 0; t < policy.trials; ++t) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(policy.seed ^ (stream * 0x9E3779B97F4A7C15ull) ^ (t + 1) * 0xBF58476D1CE4E5B9ull);
    // Partial Fisher-Yates from raw generator bits keeps the sample
    // identical across standard library implementations.
    for (std::size_t k = 0; k < batch; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng() % (N - k));
      std::swap(order[k], order[j]);
    }
    std::vector<int> labels;
    FeatureBatch full;
    for (std::size_t k = 0; k < batch; ++k) {
      labels.push_back(source.label(order[k]));
      full.push_back(source.features(order[k], G));
    }
    const LossGrad ref = loss_and_grad(model, full, labels);
    for (std::size_t g = 1; g <= G; ++g) {
      if (g == G) {
        per_trial[g - 1][t] = cosine_similarity(ref.grad, ref.grad);
        continue;
      }
      FeatureBatch reduced;
      for (std::size_t k = 0; k < batch; ++k) reduced.push_back(source.features(order[k], g));
      per_trial[g - 1][t] = cosine_similarity(ref.grad, loss_and_grad(model, reduced, labels).grad);
    }
  }

  SimilarityScore out;
  out.n_batch_images = batch;
  out.per_group_score.resize(G);
  out.confidence_halfwidth.resize(G);
  const auto T = static_cast<double>(policy.trials);
  for (std::size_t g = 0; g < G; ++g) {
    const auto& v = per_trial[g];
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / T;
    double var = 0;
    for (double s : v) var += (s - mean) * (s - mean);
    var = policy.trials > 1 ? var / (T - 1) : 0;
    // Identical trials (e.g. group G) collapse to the exact mean.
    out.per_group_score[g] = std::all_of(v.begin(), v.end(), [&](double s) { return s == v[0]; }) ? v[0] : mean;
    out.confidence_halfwidth[g] = t_critical_95(policy.trials - 1) * std::sqrt(var / T);
  }
  return out;
}

/// Smallest group whose lower confidence bound reaches `threshold`; the
/// highest group when none does.
inline std::size_t choose_group(const SimilarityScore& s, double threshold) {
  const std::size_t G = s.per_group_score.size();
  for (std::size_t g = 1; g <= G; ++g) {
    if (s.lower_bound(g) >= threshold) return g;
  }
  return G;
}

struct TuneDecision {
  std::size_t epoch = 0;
  std::size_t group = 0;
  bool tuned = false;
  SimilarityScore scores;  // empty unless tuned
};

/// Applies the warm-up / interval schedule around evaluate_groups.
class Autotuner {
 public:
  Autotuner(TunePolicy policy, std::size_t n_groups) : policy_(policy), groups_(n_groups) {
    policy_.validate();
    if (n_groups == 0) fail(Errc::InvalidArgument, "no scan groups");
    if (policy_.start_group == 0 || policy_.start_group > n_groups) policy_.start_group = n_groups;
    current_ = policy_.start_group;
  }

  bool is_tuning_epoch(std::size_t epoch) const noexcept {
    return epoch >= policy_.warmup_epochs && (epoch - policy_.warmup_epochs) % policy_.tune_interval_epochs == 0;
  }

  TuneDecision step(std::size_t epoch, const GradModel& model, const FidelityFeatureSource& source) {
    TuneDecision d;
    d.epoch = epoch;
    if (epoch < policy_.warmup_epochs) {
      d.group = policy_.start_group;
      return d;
    }
    if (is_tuning_epoch(epoch)) {
      d.scores = evaluate_groups(model, source, policy_, epoch);
      current_ = choose_group(d.scores, policy_.threshold);
      d.tuned = true;
    }
    d.group = current_;
    return d;
  }

  std::size_t current_group() const noexcept { return current_; }
  const TunePolicy& policy() const noexcept { return policy_; }

 private:
  TunePolicy policy_;
  std::size_t groups_;
  std::size_t current_;
};

/// One-shot form: the group chosen for `epoch` given the schedule, assuming
/// no earlier tuning happened between the last tuning epoch and this one.
inline std::size_t tune(const TunePolicy& policy, const FidelityFeatureSource& source, const GradModel& model,
                        std::size_t epoch) {
  Autotuner tuner(policy, source.n_groups());
  if (epoch < policy.warmup_epochs) return tuner.current_group();
  const std::size_t last = epoch - (epoch - policy.warmup_epochs) % policy.tune_interval_epochs;
  return tuner.step(last, model, source).group;
}

/// Column order: epoch, group, tuned, then score_g for g = 1..G.
inline void write_decisions_csv(std::ostream& os, const std::vector<TuneDecision>& decisions, std::size_t G) {
  os << "epoch,group,tuned";
  for (std::size_t g = 1; g <= G; ++g) os << ",score_" << g;
  os << '\n';
  for (const auto& d : decisions) {
    os << d.epoch << ',' << d.group << ',' << (d.tuned ? 1 : 0);
    for (std::size_t g = 1; g <= G; ++g) {
      os << ',' << (d.tuned ? csv::num(d.scores.per_group_score[g - 1]) : std::string());
    }
    os << '\n';
  }
}

}  // namespace pcr
