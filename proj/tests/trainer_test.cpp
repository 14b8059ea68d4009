// Copyright 2026 The kbnovelty Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "kbnovelty/trainer.hpp"
#include "support/synthetic.hpp"

using namespace kbnovelty;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Independent oracle: F1 of prob >= thr by direct recount.
double recount_f1(const std::vector<double>& s, const std::vector<int>& y, double thr) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool pred = s[i] >= thr;
    tp += pred && y[i];
    fp += pred && !y[i];
    fn += !pred && y[i];
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

// Every midpoint between sorted distinct scores, plus both infinities.
std::vector<double> all_candidates(std::vector<double> s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  std::vector<double> c = {-kInf, kInf};
  for (std::size_t i = 0; i + 1 < s.size(); ++i) c.push_back(s[i] + (s[i + 1] - s[i]) / 2);
  return c;
}

DatasetSplit overfit_split(const kbn_test::GroupedKb& kb, std::uint64_t seed) {
  DatasetSplit split;
  split.train = kb.positives;
  split.dev = kb.positives;
  const auto negs = sample_negatives(kb.positives, kb.positives, 1, seed);
  split.dev.insert(split.dev.end(), negs.negatives.begin(), negs.negatives.end());
  return split;
}

}  // namespace

TEST(Adagrad, SingleStepHandValue) {
  Vector p = Vector::Zero(1), g = Vector::Constant(1, 2.0), acc = Vector::Zero(1);
  adagrad_update(p, g, acc, 0.01, 1e-8);
  EXPECT_DOUBLE_EQ(acc(0), 4.0);
  EXPECT_NEAR(p(0), -0.01, 1e-9);
}

TEST(Adagrad, ZeroGradientIsNoOp) {
  Vector p = Vector::Constant(1, 0.3), g = Vector::Zero(1), acc = Vector::Constant(1, 2.0);
  adagrad_update(p, g, acc, 0.01, 1e-8);
  EXPECT_EQ(p(0), 0.3);
  EXPECT_EQ(acc(0), 2.0);
}

TEST(Adagrad, TwoUnitSteps) {
  Vector p = Vector::Zero(1), g = Vector::Ones(1), acc = Vector::Zero(1);
  adagrad_update(p, g, acc, 0.01, 1e-8);
  adagrad_update(p, g, acc, 0.01, 1e-8);
  EXPECT_NEAR(p(0), -0.01 - 0.01 / std::sqrt(2.0), 1e-9);
}

TEST(Adagrad, NonFiniteGradientAbortsBeforeChanges) {
  auto p = kbn_test::random_model(ModelKind::factorized, 4, 3, 5, 2, 1);
  auto g = zeros_like(p);
  g.A.setConstant(0.5);
  g.relations(0, 0) = std::nan("");
  AdagradState st;
  const auto before = p;
  EXPECT_THROW(adagrad_step(p, g, st, 0.01), NumericalError);
  EXPECT_EQ(p.A, before.A);
  EXPECT_FALSE(st.initialized);
}

TEST(Adagrad, AccumulatorsNeverDecrease) {
  auto p = kbn_test::random_model(ModelKind::dnn, 5, 4, 8, 2, 2);
  AdagradState st;
  ScorerParams prev;
  for (int step = 0; step < 5; ++step) {
    const auto batch = kbn_test::random_batch(p, 6, static_cast<std::uint64_t>(step));
    adagrad_step(p, gradients(p, batch, 1e-6), st, 0.01);
    if (step > 0)
      for_each_tensor([](const std::string&, const auto& a, const auto& b) { EXPECT_TRUE((a.array() >= b.array()).all()); },
                      st.accumulators, prev);
    prev = st.accumulators;
    EXPECT_TRUE(all_finite(p));
  }
}

TEST(SelectThreshold, SeparableExample) {
  const std::vector<double> s = {0.1, 0.4, 0.6, 0.9};
  const std::vector<int> y = {0, 0, 1, 1};
  const double t = select_threshold(s, y);
  EXPECT_DOUBLE_EQ(t, 0.5);
  EXPECT_DOUBLE_EQ(f1_report(s, y, t).f1, 1.0);
}

TEST(SelectThreshold, InvertedScoresPredictAllPositive) {
  const std::vector<double> s = {0.1, 0.4, 0.6, 0.9};
  const std::vector<int> y = {1, 1, 0, 0};
  const double t = select_threshold(s, y);
  EXPECT_EQ(t, -kInf);
  EXPECT_NEAR(f1_report(s, y, t).f1, 2.0 / 3.0, 1e-15);
}

TEST(SelectThreshold, EqualScoresGoBelowThem) {
  const std::vector<double> s = {0.7, 0.7, 0.7};
  const std::vector<int> y = {1, 0, 1};
  EXPECT_LT(select_threshold(s, y), 0.7);
}

TEST(SelectThreshold, SingleClassIsAnError) {
  const std::vector<double> s = {0.1, 0.2};
  EXPECT_THROW(select_threshold(s, std::vector<int>{1, 1}), DataError);
}

TEST(SelectThreshold, MatchesExhaustiveSweep) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 10) / 10.0;  // many ties
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    const double t = select_threshold(s, y);
    double best = -1, best_t = kInf;
    for (double c : all_candidates(s)) {
      const double f = recount_f1(s, y, c);
      if (f > best || (f == best && c < best_t)) best = f, best_t = c;
    }
    EXPECT_EQ(recount_f1(s, y, t), best);
    EXPECT_EQ(t, best_t);
  }
}

TEST(F1Report, HandConfusionMatrix) {
  const std::vector<double> probs = {1, 0, 1, 0};
  const std::vector<int> labels = {1, 1, 0, 0};
  const auto r = f1_report(probs, labels, 0.5);
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
  EXPECT_DOUBLE_EQ(r.f1, 0.5);
  EXPECT_EQ(r.count(), 4u);
}

TEST(F1Report, ConventionsAndOracle) {
  const std::vector<double> probs = {0.2, 0.3};
  const std::vector<int> labels = {1, 0};
  const auto none = f1_report(probs, labels, 0.9);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(f1_report(std::vector<double>{0.9, 0.1}, labels, 0.5).f1, 1.0);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s(10000);
  std::vector<int> y(10000);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = u(rng), y[i] = u(rng) < s[i];
  for (double t : {0.1, 0.5, 0.77}) EXPECT_DOUBLE_EQ(f1_report(s, y, t).f1, recount_f1(s, y, t));
}

TEST(EvaluateF1, CountsUnscorable) {
  const auto kb = kbn_test::grouped_kb(6, 1);
  auto p = init_scorer(ScorerConfig::for_kind(ModelKind::factorized, 8), kb.table, kb.schema, 1);
  std::vector<LabeledTriple> items = {kb.positives[0], kbn_test::make_pos("Rel0", "unknown", "g5w0")};
  const auto r = evaluate_f1(p, 0.0, items);
  EXPECT_EQ(r.unscorable, 1u);
  EXPECT_EQ(r.count(), 1u);
  EXPECT_EQ(r.tp, 1u);
}

TEST(Train, OverfitsSmallKb) {
  const auto kb = kbn_test::grouped_kb(10, 3);
  TrainConfig cfg;
  cfg.d2 = 50;
  cfg.max_epochs = 500;
  cfg.patience = 500;
  cfg.learning_rate = 0.05;
  const auto split = overfit_split(kb, 4);
  const auto res = train(ModelKind::factorized, split, kb.table, kb.schema, cfg);
  EXPECT_FALSE(res.diverged);
  EXPECT_GE(evaluate_f1(res.params, res.threshold, split.dev).f1, 0.99);
}

TEST(Train, DeterministicInSeed) {
  const auto kb = kbn_test::grouped_kb(6, 3);
  TrainConfig cfg;
  cfg.d2 = 12;
  cfg.max_epochs = 8;
  cfg.batch_size = 64;
  const auto split = overfit_split(kb, 1);
  for (auto kind : {ModelKind::dnn, ModelKind::bilinear}) {
    const auto a = train(kind, split, kb.table, kb.schema, cfg);
    const auto b = train(kind, split, kb.table, kb.schema, cfg);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
      EXPECT_EQ(a.history[i].dev_f1, b.history[i].dev_f1);
    }
    for_each_tensor([](const std::string&, const auto& x, const auto& y) { EXPECT_EQ(x, y); }, a.params, b.params);
  }
}

TEST(Train, PatienceZeroStopsOneEpochAfterBest) {
  const auto kb = kbn_test::grouped_kb(6, 3);
  TrainConfig cfg;
  cfg.d2 = 12;
  cfg.max_epochs = 200;
  cfg.patience = 0;
  cfg.batch_size = 50;
  const auto res = train(ModelKind::factorized, overfit_split(kb, 1), kb.table, kb.schema, cfg);
  ASSERT_LT(res.history.size(), cfg.max_epochs);
  EXPECT_EQ(res.history.size(), res.best_epoch + 1);
}

TEST(Train, KeepsBestDevParameters) {
  const auto kb = kbn_test::grouped_kb(6, 5);
  TrainConfig cfg;
  cfg.d2 = 12;
  cfg.max_epochs = 15;
  cfg.patience = 3;
  const auto split = overfit_split(kb, 2);
  const auto res = train(ModelKind::prototypical, split, kb.table, kb.schema, cfg);
  double best = -1;
  for (const auto& e : res.history) best = std::max(best, e.dev_f1);
  EXPECT_EQ(res.best_dev_f1, best);
  EXPECT_DOUBLE_EQ(evaluate_f1(res.params, res.threshold, split.dev).f1, best);
}

TEST(Train, DivergenceIsReported) {
  const auto kb = kbn_test::grouped_kb(6, 5);
  TrainConfig cfg;
  cfg.d2 = 12;
  cfg.max_epochs = 3;
  cfg.learning_rate = std::numeric_limits<double>::infinity();
  const auto res = train(ModelKind::bilinear, overfit_split(kb, 2), kb.table, kb.schema, cfg);
  EXPECT_TRUE(res.diverged);
  EXPECT_FALSE(res.message.empty());
  EXPECT_TRUE(all_finite(res.params));
}

TEST(TrainConfig, BatchDefaults) {
  TrainConfig cfg;
  EXPECT_EQ(cfg.batch_for(ModelKind::dnn), 200u);
  EXPECT_EQ(cfg.batch_for(ModelKind::factorized), 600u);
  EXPECT_DOUBLE_EQ(cfg.learning_rate, 0.01);
  EXPECT_DOUBLE_EQ(cfg.l2_weight, 1e-6);
}
