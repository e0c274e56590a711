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

#include "pcr/autotune.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>
#include <sstream>

#include "engineered_source.hpp"
#include "pcr/container.hpp"
#include "test_support.hpp"

namespace pcr {
namespace {

GradModel random_model(std::mt19937_64& rng, std::size_t C, std::size_t F, double scale = 0.5) {
  GradModel m(C, F);
  std::normal_distribution<double> d(0, scale);
  for (auto& w : m.weights) w = d(rng);
  for (auto& b : m.bias) b = d(rng);
  return m;
}

FeatureBatch random_batch(std::mt19937_64& rng, std::size_t n, std::size_t F) {
  FeatureBatch b;
  std::uniform_real_distribution<double> d(0, 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(F);
    for (auto& v : x) v = d(rng);
    b.push_back(x);
  }
  return b;
}

std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, std::size_t C) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(testing::uniform(rng, 0, C - 1));
  return y;
}

double& param(GradModel& m, std::size_t k) {
  return k < m.weights.size() ? m.weights[k] : m.bias[k - m.weights.size()];
}

// Central differences on the loss, compared against the analytic gradient.
double fd_relative_error(GradModel m, const FeatureBatch& x, std::span<const int> y) {
  const LossGrad lg = loss_and_grad(m, x, y);
  double err = 0, norm = 0;
  for (std::size_t k = 0; k < m.n_params(); ++k) {
    const double h = 1e-5;
    const double keep = param(m, k);
    param(m, k) = keep + h;
    const double up = loss_and_grad(m, x, y).loss;
    param(m, k) = keep - h;
    const double down = loss_and_grad(m, x, y).loss;
    param(m, k) = keep;
    const double fd = (up - down) / (2 * h);
    err += (fd - lg.grad[k]) * (fd - lg.grad[k]);
    norm += lg.grad[k] * lg.grad[k];
  }
  return std::sqrt(err / norm);
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = testing::uniform(rng, 2, 6), F = testing::uniform(rng, 1, 12), n = testing::uniform(rng, 1, 9);
    const GradModel m = random_model(rng, C, F);
    const FeatureBatch x = random_batch(rng, n, F);
    const auto y = random_labels(rng, n, C);
    EXPECT_LT(fd_relative_error(m, x, y), 1e-5) << trial;
  }
}

TEST(Gradient, ZeroModelLossIsLogClasses) {
  std::mt19937_64 rng(2);
  const FeatureBatch x = random_batch(rng, 5, 4);
  const std::vector<int> y = {0, 1, 1, 0, 1};
  EXPECT_NEAR(loss_and_grad(GradModel(2, 4), x, y).loss, std::numbers::ln2, 1e-15);
  const std::vector<int> y3 = {0, 1, 2, 0, 1};
  EXPECT_NEAR(loss_and_grad(GradModel(3, 4), x, y3).loss, std::log(3.0), 1e-15);
}

TEST(Gradient, DuplicatedBatchIsUnchanged) {
  std::mt19937_64 rng(3);
  const GradModel m = random_model(rng, 4, 6);
  const FeatureBatch x = random_batch(rng, 7, 6);
  const auto y = random_labels(rng, 7, 4);
  FeatureBatch xx = x;
  xx.values.insert(xx.values.end(), x.values.begin(), x.values.end());
  std::vector<int> yy = y;
  yy.insert(yy.end(), y.begin(), y.end());
  const LossGrad a = loss_and_grad(m, x, y), b = loss_and_grad(m, xx, yy);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  for (std::size_t k = 0; k < a.grad.size(); ++k) EXPECT_NEAR(a.grad[k], b.grad[k], 1e-14);
}

TEST(Gradient, TrainStepLowersLoss) {
  std::mt19937_64 rng(4);
  GradModel m(3, 5);
  const FeatureBatch x = random_batch(rng, 30, 5);
  const auto y = random_labels(rng, 30, 3);
  double last = train_step(m, x, y, 0.5);
  for (int i = 0; i < 20; ++i) {
    const double loss = train_step(m, x, y, 0.5);
    EXPECT_LT(loss, last);
    last = loss;
  }
}

TEST(Gradient, ShapeErrors) {
  std::mt19937_64 rng(5);
  const GradModel m(2, 3);
  const FeatureBatch x = random_batch(rng, 2, 3);
  const FeatureBatch wrong = random_batch(rng, 2, 4);
  const std::vector<int> y = {0, 1};
  const std::vector<int> short_y = {0};
  EXPECT_THROW(loss_and_grad(m, wrong, y), Error);
  EXPECT_THROW(loss_and_grad(m, x, short_y), Error);
  EXPECT_THROW(loss_and_grad(m, FeatureBatch{}, std::vector<int>{}), Error);
  FeatureBatch b;
  b.push_back(std::vector<double>{1, 2});
  EXPECT_THROW(b.push_back(std::vector<double>{1}), Error);
}

TEST(Cosine, BasicValues) {
  const std::vector<double> a = {1, 0, 0}, b = {0, 2, 0}, c = {-3, 0, 0};
  EXPECT_EQ(cosine_similarity(a, b), 0.0);
  EXPECT_EQ(cosine_similarity(a, a), 1.0);
  EXPECT_EQ(cosine_similarity(a, c), -1.0);
  try {
    cosine_similarity(a, std::vector<double>{0, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ZeroGradient);
  }
  EXPECT_THROW(cosine_similarity(a, std::vector<double>{1, 2}), Error);
}

TEST(Cosine, ScaleInvariant) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> d(0, 1);
  std::uniform_real_distribution<double> log_k(-3, 3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(testing::uniform(rng, 1, 50)), b(a.size());
    for (auto& v : a) v = d(rng);
    for (auto& v : b) v = d(rng);
    const double k = std::pow(10.0, log_k(rng));
    std::vector<double> kb = b;
    for (auto& v : kb) v *= k;
    EXPECT_NEAR(cosine_similarity(a, kb), cosine_similarity(a, b), 1e-12);
  }
}

TEST(Score, SelfScoreIsExactlyOne) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const GradModel m = random_model(rng, 3, 8);
    const FeatureBatch x = random_batch(rng, 6, 8);
    const auto y = random_labels(rng, 6, 3);
    EXPECT_EQ(score(m, x, x, y), 1.0);
  }
}

TEST(Featurize, BoxResamplesLuma) {
  Rgb8Image img(4, 2);
  for (std::size_t x = 0; x < 4; ++x) {
    for (std::size_t y = 0; y < 2; ++y) std::fill_n(img.at(x, y), 3, x < 2 ? 0 : 255);
  }
  const auto f = featurize(img, {2, 1});
  ASSERT_EQ(f.size(), 2u);
  EXPECT_NEAR(f[0], 0.0, 1e-9);
  EXPECT_NEAR(f[1], 1.0, 1e-9);
  // Fractional coverage: 3 columns onto 2 cells.
  Rgb8Image odd(3, 1);
  std::fill_n(odd.at(1, 0), 3, 255);
  const auto g = featurize(odd, {2, 1});
  EXPECT_NEAR(g[0], 1.0 / 3, 1e-9);
  EXPECT_NEAR(g[1], 1.0 / 3, 1e-9);
  EXPECT_THROW(featurize(Rgb8Image{}), Error);
}

// ---------------------------------------------------------------------------
// Policy

// Group g sees the class signal blended with per-image distractors; the
// blend weight on the signal rises with g and is exact at G.
class BlendSource final : public FidelityFeatureSource {
 public:
  BlendSource(std::size_t n, std::size_t G, std::vector<double> signal_weight, std::uint64_t seed = 1)
      : groups_(G), weight_(std::move(signal_weight)) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);
      std::vector<double> full(kDim), noise(kDim);
      for (std::size_t k = 0; k < kDim; ++k) {
        full[k] = d(rng) + (k < 4 ? (label ? 2.0 : -2.0) : 0.0);
        noise[k] = d(rng) * 3;
      }
      labels_.push_back(label);
      full_.push_back(full);
      noise_.push_back(noise);
    }
  }
  static constexpr std::size_t kDim = 8;
  std::size_t n_images() const override { return full_.size(); }
  std::size_t n_groups() const override { return groups_; }
  int label(std::size_t i) const override { return labels_[i]; }
  std::vector<double> features(std::size_t i, std::size_t g) const override {
    if (g == groups_) return full_[i];
    const double w = weight_[g - 1];
    std::vector<double> f(kDim);
    for (std::size_t k = 0; k < kDim; ++k) f[k] = w * full_[i][k] + (1 - w) * noise_[i][k];
    return f;
  }

 private:
  std::size_t groups_;
  std::vector<double> weight_;
  std::vector<int> labels_;
  std::vector<std::vector<double>> full_, noise_;
};

GradModel trained(const FidelityFeatureSource& s, int steps = 200) {
  GradModel m(2, BlendSource::kDim);
  FeatureBatch x;
  std::vector<int> y;
  for (std::size_t i = 0; i < s.n_images(); ++i) {
    x.push_back(s.features(i, s.n_groups()));
    y.push_back(s.label(i));
  }
  for (int k = 0; k < steps; ++k) train_step(m, x, y, 0.1);
  return m;
}

// Independent restatement of the decision rule.
std::size_t smallest_passing(const SimilarityScore& s, double threshold) {
  const std::size_t G = s.per_group_score.size();
  std::size_t best = G;
  for (std::size_t g = G; g >= 1; --g) {
    if (s.per_group_score[g - 1] - s.confidence_halfwidth[g - 1] >= threshold) best = g;
  }
  return best;
}

TEST(Policy, AllOnesPicksFirstGroup) {
  SimilarityScore s;
  s.per_group_score.assign(10, 1.0);
  s.confidence_halfwidth.assign(10, 0.0);
  EXPECT_EQ(choose_group(s, 0.999), 1u);
  EXPECT_EQ(choose_group(s, 1.0), 1u);
}

TEST(Policy, NothingPassingPicksLastGroup) {
  SimilarityScore s;
  s.per_group_score = {0.1, 0.2, 0.5};
  s.confidence_halfwidth = {0, 0, 0};
  EXPECT_EQ(choose_group(s, 0.9), 3u);
}

TEST(Policy, ChoiceMatchesRuleAndIsMonotoneInThreshold) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 500; ++trial) {
    SimilarityScore s;
    const std::size_t G = testing::uniform(rng, 1, 10);
    for (std::size_t g = 0; g < G; ++g) {
      s.per_group_score.push_back(u(rng));
      s.confidence_halfwidth.push_back(0.1 * u(rng));
    }
    for (double t = 0.05; t <= 1.0; t += 0.05) EXPECT_EQ(choose_group(s, t), smallest_passing(s, t));
    // Monotone once the lower bounds are ordered by group.
    std::sort(s.per_group_score.begin(), s.per_group_score.end());
    std::fill(s.confidence_halfwidth.begin(), s.confidence_halfwidth.end(), 0.0);
    std::size_t prev = 0;
    for (double t = 0.05; t <= 1.0; t += 0.05) {
      const std::size_t g = choose_group(s, t);
      EXPECT_GE(g, prev);
      prev = g;
    }
  }
}

TEST(Policy, ScheduleWarmupThenInterval) {
  TunePolicy p;
  p.warmup_epochs = 3;
  p.tune_interval_epochs = 4;
  p.trials = 2;
  p.batch_budget = 16;
  const BlendSource src(40, 5, {0.2, 0.5, 0.9, 0.99});
  const GradModel m = trained(src);
  Autotuner tuner(p, 5);
  std::vector<std::size_t> tuned;
  for (std::size_t e = 0; e < 16; ++e) {
    const TuneDecision d = tuner.step(e, m, src);
    if (e < 3) EXPECT_EQ(d.group, 5u);
    if (d.tuned) tuned.push_back(e);
    EXPECT_EQ(d.tuned, tuner.is_tuning_epoch(e));
  }
  EXPECT_EQ(tuned, (std::vector<std::size_t>{3, 7, 11, 15}));
  EXPECT_EQ(tune(p, src, m, 1), 5u);
  EXPECT_EQ(tune(p, src, m, 9), tuner.step(7, m, src).group);
}

TEST(Policy, StartGroupDuringWarmup) {
  TunePolicy p;
  p.start_group = 2;
  const BlendSource src(10, 4, {0.1, 0.2, 0.3});
  EXPECT_EQ(tune(p, src, GradModel(2, BlendSource::kDim), 0), 2u);
  p.start_group = 9;  // out of range falls back to the highest group
  EXPECT_EQ(tune(p, src, GradModel(2, BlendSource::kDim), 0), 4u);
}

TEST(Policy, SeedDeterminism) {
  const BlendSource src(60, 4, {0.3, 0.6, 0.9});
  const GradModel m = trained(src, 50);
  TunePolicy p;
  p.batch_budget = 20;
  p.trials = 4;
  p.seed = 11;
  const auto a = evaluate_groups(m, src, p, 5), b = evaluate_groups(m, src, p, 5);
  EXPECT_EQ(a.per_group_score, b.per_group_score);
  EXPECT_EQ(a.confidence_halfwidth, b.confidence_halfwidth);
  p.seed = 12;
  EXPECT_NE(evaluate_groups(m, src, p, 5).per_group_score, a.per_group_score);
  EXPECT_EQ(a.per_group_score.back(), 1.0);
  EXPECT_EQ(a.confidence_halfwidth.back(), 0.0);
  EXPECT_EQ(a.n_batch_images, 20u);
}

TEST(Policy, LowerThresholdPicksStrictlyLowerGroup) {
  const std::size_t G = 10;
  const BlendSource src(400, G, {0.0, 0.2, 0.4, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95});
  const GradModel m = trained(src);
  TunePolicy p;
  p.batch_budget = 256;
  p.trials = 20;
  p.seed = 3;
  const SimilarityScore s = evaluate_groups(m, src, p, p.warmup_epochs);
  // Exhaustive check of the rule over a threshold grid.
  for (double t = 0.01; t <= 1.0; t += 0.01) EXPECT_EQ(choose_group(s, t), smallest_passing(s, t)) << t;
  const std::size_t at80 = choose_group(s, 0.8), at90 = choose_group(s, 0.9);
  EXPECT_LT(at80, at90);
  EXPECT_LT(at90, G);
  p.threshold = 0.8;
  EXPECT_EQ(tune(p, src, m, p.warmup_epochs), at80);
}

TEST(Policy, EngineeredScoresAreExact) {
  const std::vector<double> target = {0.1, 0.3, 0.5, 0.7, 0.85, 0.95, 0.97, 0.98, 0.99, 1.0};
  const testing::EngineeredSource src(50, target);
  const SimilarityScore s = evaluate_groups(src.zero_model(), src, src.policy(0.8), 5);
  for (std::size_t g = 1; g <= 10; ++g) {
    EXPECT_NEAR(s.per_group_score[g - 1], target[g - 1], 1e-12) << g;
    EXPECT_LT(s.confidence_halfwidth[g - 1], 1e-12);
  }
  EXPECT_EQ(choose_group(s, 0.8), 5u);
  EXPECT_EQ(choose_group(s, 0.9), 6u);
  EXPECT_EQ(choose_group(s, 0.995), 10u);
}

TEST(Policy, Validation) {
  TunePolicy p;
  p.threshold = 0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.tune_interval_epochs = 0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.trials = 0;
  EXPECT_THROW(p.validate(), Error);
  EXPECT_THROW(Autotuner(TunePolicy{}, 0), Error);
  EXPECT_EQ(t_critical_95(1), 12.706);
  EXPECT_EQ(t_critical_95(1000), 1.960);
}

TEST(Policy, DecisionsCsv) {
  TuneDecision idle;
  idle.epoch = 0;
  idle.group = 3;
  TuneDecision tuned;
  tuned.epoch = 5;
  tuned.group = 1;
  tuned.tuned = true;
  tuned.scores.per_group_score = {0.5, 0.75, 1};
  tuned.scores.confidence_halfwidth = {0, 0, 0};
  std::ostringstream os;
  write_decisions_csv(os, {idle, tuned}, 3);
  EXPECT_EQ(os.str(), "epoch,group,tuned,score_1,score_2,score_3\n0,3,0,,,\n5,1,1,0.5,0.75,1\n");
}

TEST(PcrFeatures, ReadsRecordsAtEveryGroup) {
  testing::TempDir dir;
  testing::CorpusOptions opts;
  opts.count = 8;
  opts.max_side = 160;
  const auto images = testing::photo_corpus(opts);
  {
    FileSink sink(dir / "a.pcr");
    write_record(encode_record(testing::as_encode_items(images), 10), sink);
  }
  const PcrFeatureSource src(dir.path(), {16, 16});
  ASSERT_EQ(src.n_images(), 8u);
  ASSERT_EQ(src.n_groups(), 10u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(src.label(i), images[i].label);
    const auto full = src.features(i, 10);
    EXPECT_EQ(full, featurize(decode_rgb8(images[i].jpeg), {16, 16}));
    EXPECT_EQ(src.features(i, 1).size(), 256u);
  }
  TunePolicy p;
  p.trials = 2;
  int classes = 0;
  for (const auto& img : images) classes = std::max(classes, img.label + 1);
  const GradModel m(static_cast<std::size_t>(classes), 256);
  const SimilarityScore s = evaluate_groups(m, src, p, p.warmup_epochs);
  EXPECT_EQ(s.per_group_score.back(), 1.0);
  EXPECT_GT(s.per_group_score[4], s.per_group_score[0] - 0.5);
}

}  // namespace
}  // namespace pcr
