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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "kbnovelty/novelty.hpp"

using namespace kbnovelty;

namespace {

EmbeddingTable hand_table() {
  std::istringstream in("4 2\na 1 0\nb 0 1\nc 3 4\nd 1 1\n");
  return load_word_vectors(in);
}

Triple T(const char* rel, std::vector<std::string> h, std::vector<std::string> t) {
  return {rel, Phrase(std::move(h)), Phrase(std::move(t))};
}

// A random world: `words` random vectors and `n` triples of 1-2 tokens.
struct World {
  EmbeddingTable table;
  std::vector<Triple> triples;
};

World random_world(std::size_t words, std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::vector<std::string> vocab;
  for (std::size_t i = 0; i < words; ++i) vocab.push_back("w" + std::to_string(i));
  World w{random_word_vectors(vocab, dim, seed, 1.0), {}};
  std::mt19937_64 rng(seed);
  auto phrase = [&] {
    std::vector<std::string> p{vocab[rng() % words]};
    if (rng() % 2) p.push_back(vocab[rng() % words]);
    return Phrase(p);
  };
  for (std::size_t i = 0; i < n; ++i) w.triples.push_back({rng() % 2 ? "IsA" : "HasA", phrase(), phrase()});
  return w;
}

// Brute-force oracle: every distance, then a full sort with the same
// tie rule, written without the index.
std::vector<std::pair<double, Triple>> oracle_knn(const World& w, const Triple& q, std::size_t k) {
  std::vector<std::tuple<double, Triple, std::size_t>> all;
  for (std::size_t i = 0; i < w.triples.size(); ++i) {
    const auto hq = phrase_average(w.table, q.head).vec, tq = phrase_average(w.table, q.tail).vec;
    const auto hi = phrase_average(w.table, w.triples[i].head).vec, ti = phrase_average(w.table, w.triples[i].tail).vec;
    double dh = 0, dt = 0;
    for (Eigen::Index j = 0; j < hq.size(); ++j) dh += (hq(j) - hi(j)) * (hq(j) - hi(j));
    for (Eigen::Index j = 0; j < tq.size(); ++j) dt += (tq(j) - ti(j)) * (tq(j) - ti(j));
    all.emplace_back(std::sqrt(dh) + std::sqrt(dt), w.triples[i], i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::pair<double, Triple>> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.emplace_back(std::get<0>(all[i]), std::get<1>(all[i]));
  return out;
}

}  // namespace

TEST(TripleDistance, HandValues) {
  const auto t = hand_table();
  const auto a = T("IsA", {"a"}, {"c"});
  EXPECT_EQ(*triple_distance(a, a, t), 0.0);
  EXPECT_EQ(*triple_distance(a, T("HasA", {"a"}, {"c"}), t), 0.0);
  EXPECT_DOUBLE_EQ(*triple_distance(a, T("IsA", {"b"}, {"c"}), t), std::sqrt(2.0));
  // Averages: (a b) -> (0.5, 0.5); tails c vs d: |(2,3)| = sqrt(13).
  EXPECT_DOUBLE_EQ(*triple_distance(T("IsA", {"a", "b"}, {"c"}), T("IsA", {"d"}, {"d"}), t),
                   std::sqrt(0.5) + std::sqrt(13.0));
  EXPECT_FALSE(triple_distance(a, T("IsA", {"zz"}, {"c"}), t).has_value());
}

TEST(TripleDistance, Pseudometric) {
  const auto w = random_world(40, 300, 6, 3);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    const auto& a = w.triples[rng() % 300];
    const auto& b = w.triples[rng() % 300];
    const auto& c = w.triples[rng() % 300];
    const double ab = *triple_distance(a, b, w.table), ba = *triple_distance(b, a, w.table);
    EXPECT_EQ(ab, ba);
    EXPECT_GE(ab, 0.0);
    EXPECT_EQ(*triple_distance(a, a, w.table), 0.0);
    EXPECT_LE(*triple_distance(a, c, w.table), ab + *triple_distance(b, c, w.table) + 1e-9);
  }
}

TEST(NoveltyIndex, ExcludesUnscorableTriples) {
  const std::vector<Triple> train = {T("IsA", {"a"}, {"b"}), T("IsA", {"zz"}, {"b"}), T("IsA", {"c"}, {"qq", "d"})};
  const NoveltyIndex index(hand_table(), train);
  EXPECT_EQ(index.size(), 2u);
  EXPECT_EQ(index.excluded(), 1u);
  EXPECT_THROW(index.k_nearest(T("IsA", {"zz"}, {"b"}), 1), DataError);
  EXPECT_THROW(index.k_nearest(train[0], 0), DataError);
}

TEST(KNearest, SelfFirstAndBoundary) {
  const auto w = random_world(30, 100, 5, 7);
  const NoveltyIndex index(w.table, w.triples);
  const auto nn = index.k_nearest(w.triples[17], 3);
  EXPECT_EQ(nn[0].distance, 0.0);
  EXPECT_EQ(index.triple(nn[0].index), w.triples[17]);
  const auto all = index.k_nearest(w.triples[0], 1000);
  ASSERT_EQ(all.size(), index.size());
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_LE(all[i - 1].distance, all[i].distance);
}

TEST(KNearest, MatchesBruteForceOracle) {
  const auto w = random_world(25, 1000, 4, 11);  // small vocabulary: many exact ties
  const NoveltyIndex index(w.table, w.triples, 3);
  const auto queries = random_world(25, 50, 4, 11 + 1).triples;
  for (const auto& q : queries) {
    const auto got = index.k_nearest(q, 5);
    const auto want = oracle_knn(w, q, 5);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].distance, want[i].first);
      EXPECT_EQ(index.triple(got[i].index), want[i].second);
    }
    const auto m = min_distance_to_train(index, q);
    EXPECT_EQ(m.index, got[0].index);
    EXPECT_EQ(m.distance, got[0].distance);
  }
}

TEST(KNearest, ThreadCountDoesNotChangeResults) {
  const auto w = random_world(50, 700, 8, 2);
  NoveltyIndex index(w.table, w.triples, 1);
  const auto q = w.triples[3];
  const auto one = index.distances(*index.represent(q));
  index.set_threads(4);
  EXPECT_EQ(index.distances(*index.represent(q)), one);
}

TEST(Quantiles, LinearInterpolation) {
  std::vector<double> d(100);
  std::iota(d.begin(), d.end(), 1.0);
  const auto t = compute_quantile_thresholds(d);
  EXPECT_NEAR(t.q33, 33.67, 1e-9);
  EXPECT_NEAR(t.q66, 66.34, 1e-9);
  EXPECT_EQ(t.source, ThresholdSource::computed);
  std::reverse(d.begin(), d.end());
  const auto r = compute_quantile_thresholds(d);
  EXPECT_EQ(r.q33, t.q33);
  EXPECT_EQ(r.q66, t.q66);
}

TEST(Quantiles, ConstantAndEmpty) {
  const std::vector<double> c(7, 2.5);
  const auto t = compute_quantile_thresholds(c);
  EXPECT_EQ(t.q33, 2.5);
  EXPECT_EQ(t.q66, 2.5);
  EXPECT_THROW(compute_quantile_thresholds(std::vector<double>{}), DataError);
}

TEST(Buckets, PresetAssignment) {
  const auto t = BucketThresholds::paper_confidence();
  EXPECT_EQ(bucket_assign(1.0, t), Bucket::near);
  EXPECT_EQ(bucket_assign(2.0, t), Bucket::mid);
  EXPECT_EQ(bucket_assign(3.5, t), Bucket::far);
  EXPECT_EQ(bucket_assign(1.93, t), Bucket::near);
  EXPECT_EQ(bucket_assign(2.80, t), Bucket::mid);
  EXPECT_EQ(BucketThresholds::preset("paper_random").q66, 2.95);
  EXPECT_EQ(BucketThresholds::preset("paper_wikipedia").q33, 3.21);
  EXPECT_THROW(BucketThresholds::preset("computed"), DataError);
  EXPECT_THROW(BucketThresholds::manual(2.0, 1.0), DataError);
}

TEST(Buckets, PartitionCounts) {
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> e(0.5);
  std::vector<double> d(5000);
  for (auto& x : d) x = e(rng);
  for (const auto& t : {BucketThresholds::paper_confidence(), compute_quantile_thresholds(d)}) {
    std::size_t counts[3] = {};
    for (double x : d) ++counts[static_cast<int>(bucket_assign(x, t))];
    EXPECT_EQ(counts[0] + counts[1] + counts[2], d.size());
  }
}

TEST(Curve, MatchesRecomputeOracle) {
  const auto w = random_world(40, 400, 5, 5);
  const NoveltyIndex index(w.table, std::span(w.triples).first(300));
  std::vector<Triple> ranked(w.triples.begin() + 300, w.triples.end());
  std::vector<std::size_t> ks(100);
  std::iota(ks.begin(), ks.end(), std::size_t{1});
  const auto curve = topk_mean_distance_curve(ranked, index, ks);
  ASSERT_EQ(curve.points.size(), 100u);
  for (std::size_t k = 1; k <= 100; ++k) {
    double sum = 0;
    for (std::size_t i = 0; i < k; ++i) sum += oracle_knn({w.table, index.triples()}, ranked[i], 1)[0].first;
    EXPECT_NEAR(curve.points[k - 1].mean_distance, sum / static_cast<double>(k), 1e-12);
  }
  EXPECT_EQ(curve.points[0].mean_distance, index.nearest(ranked[0]).distance);
}

TEST(Curve, ConstantDistancesAndUnscorable) {
  const auto t = hand_table();
  const NoveltyIndex index(t, std::vector<Triple>{T("IsA", {"a"}, {"a"})});
  const std::vector<Triple> ranked = {T("IsA", {"b"}, {"a"}), T("IsA", {"zz"}, {"a"}), T("HasA", {"b"}, {"a"})};
  const std::vector<std::size_t> ks = {1, 2};
  const auto curve = topk_mean_distance_curve(ranked, index, ks);
  EXPECT_EQ(curve.unscorable, 1u);
  EXPECT_DOUBLE_EQ(curve.points[0].mean_distance, std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(curve.points[1].mean_distance, std::sqrt(2.0));
  const std::vector<std::size_t> too_many = {3};
  EXPECT_THROW(topk_mean_distance_curve(ranked, index, too_many), DataError);
  std::ostringstream out;
  write_curve(out, curve);
  EXPECT_EQ(out.str().substr(0, 16), "K\tmean_distance\n");
}

TEST(Pearson, PerfectAndAntiCorrelation) {
  const std::vector<double> x = {1, 2, 4, 8}, neg = {-1, -2, -4, -8};
  EXPECT_DOUBLE_EQ(pearson(x, x), 1.0);
  EXPECT_DOUBLE_EQ(pearson(x, neg), -1.0);
  EXPECT_THROW(pearson(x, std::vector<double>{3, 3, 3, 3}), NumericalError);
  EXPECT_THROW(pearson(std::vector<double>{1}, std::vector<double>{2}), DataError);
}

TEST(Pearson, MatchesTwoPassLongDoubleOracle) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(1000), y(1000);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = 1e3 + n(rng);  // offset mean stresses one-pass formulas
      y[i] = 0.3 * x[i] + n(rng);
    }
    long double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
    mx /= x.size(), my /= y.size();
    long double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
      sxy += (x[i] - mx) * (y[i] - my);
    }
    const double oracle = static_cast<double>(sxy / std::sqrt(sxx * syy));
    EXPECT_NEAR(pearson(x, y), oracle, 1e-12);
  }
}
