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

/** @file novelty.hpp --- embedding-distance novelty of triples.
 *
 * The distance between two triples is
 *
 *     d(a, b) = ||head(a) - head(b)||_2 + ||tail(a) - tail(b)||_2
 *
 * where head and tail are averages of frozen pretrained word vectors and
 * the relation plays no part. A triple's novelty is its distance to the
 * closest training triple. Novelty buckets split that distance at two
 * thresholds: near (d <= q33), mid (q33 < d <= q66), far (d > q66).
 *
 * All searches are exact full scans; results do not depend on the thread
 * count.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "kbnovelty/corpus.hpp"
#include "kbnovelty/embeddings.hpp"
#include "kbnovelty/error.hpp"
#include "kbnovelty/text.hpp"

namespace kbnovelty {

namespace detail {

// Plain sequential loop: identical summation order wherever it is called,
// so index scans and pairwise distances agree to the last bit.
inline double euclidean(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

/// Runs body(begin, end) over [0, n) in contiguous blocks.
template <class Body>
void parallel_blocks(std::size_t n, std::size_t threads, Body&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n / 1024 + 1));
  if (threads == 1) {
    body(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t step = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = t * step, e = std::min(n, b + step);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Averaged head and tail vectors of a scorable triple.
struct TripleRep {
  Vector head;
  Vector tail;
};

/// std::nullopt when head or tail has no in-vocabulary token.
inline std::optional<TripleRep> represent(const EmbeddingTable& table, const Triple& t) {
  auto h = phrase_average(table, t.head);
  auto tl = phrase_average(table, t.tail);
  if (h.oov() || tl.oov()) return std::nullopt;
  return TripleRep{std::move(h.vec), std::move(tl.vec)};
}

inline double rep_distance(const TripleRep& a, const TripleRep& b) {
  const auto n = static_cast<std::size_t>(a.head.size());
  return detail::euclidean(a.head.data(), b.head.data(), n) + detail::euclidean(a.tail.data(), b.tail.data(), n);
}

/// Novelty distance; std::nullopt when either triple is unscorable.
inline std::optional<double> triple_distance(const Triple& a, const Triple& b, const EmbeddingTable& table) {
  const auto ra = represent(table, a);
  const auto rb = represent(table, b);
  if (!ra || !rb) return std::nullopt;
  return rep_distance(*ra, *rb);
}

struct Neighbor {
  std::size_t index = 0;  // position in NoveltyIndex::triples()
  double distance = 0.0;
};

/// Precomputed representations of the training triples.
class NoveltyIndex {
 public:
  NoveltyIndex(EmbeddingTable table, std::span<const Triple> training, std::size_t threads = 1)
      : table_(std::move(table)), threads_(std::max<std::size_t>(1, threads)) {
    const auto d = static_cast<Eigen::Index>(table_.dim());
    std::vector<TripleRep> reps;
    reps.reserve(training.size());
    for (const auto& t : training) {
      auto r = kbnovelty::represent(table_, t);
      if (!r) {
        ++excluded_;
        continue;
      }
      reps.push_back(std::move(*r));
      triples_.push_back(t);
    }
    heads_.resize(d, static_cast<Eigen::Index>(reps.size()));
    tails_.resize(d, static_cast<Eigen::Index>(reps.size()));
    for (std::size_t i = 0; i < reps.size(); ++i) {
      heads_.col(static_cast<Eigen::Index>(i)) = reps[i].head;
      tails_.col(static_cast<Eigen::Index>(i)) = reps[i].tail;
    }
  }

  NoveltyIndex(EmbeddingTable table, std::span<const LabeledTriple> training, std::size_t threads = 1)
      : NoveltyIndex(std::move(table), positives_of(training), threads) {}

  std::size_t size() const noexcept { return triples_.size(); }
  bool empty() const noexcept { return triples_.empty(); }
  std::size_t excluded() const noexcept { return excluded_; }
  const std::vector<Triple>& triples() const noexcept { return triples_; }
  const Triple& triple(std::size_t i) const { return triples_.at(i); }
  const EmbeddingTable& table() const noexcept { return table_; }
  void set_threads(std::size_t n) { threads_ = std::max<std::size_t>(1, n); }

  std::optional<TripleRep> represent(const Triple& t) const { return kbnovelty::represent(table_, t); }

  /// Distance from the query to every indexed triple.
  std::vector<double> distances(const TripleRep& q) const {
    std::vector<double> out(size());
    const auto d = table_.dim();
    detail::parallel_blocks(size(), threads_, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        out[i] = detail::euclidean(heads_.col(c).data(), q.head.data(), d) +
                 detail::euclidean(tails_.col(c).data(), q.tail.data(), d);
      }
    });
    return out;
  }

  /// The k closest indexed triples in ascending distance; equal distances
  /// are ordered by the triple, then by index position.
  std::vector<Neighbor> k_nearest(const TripleRep& q, std::size_t k) const {
    if (k == 0) throw DataError("k_nearest needs k >= 1");
    if (empty()) throw DataError("novelty index is empty");
    const auto dist = distances(q);
    std::vector<std::size_t> order(size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t kk = std::min(k, order.size());
    const auto less = [&](std::size_t a, std::size_t b) { return before(dist, a, b); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(), less);
    std::vector<Neighbor> out;
    out.reserve(kk);
    for (std::size_t i = 0; i < kk; ++i) out.push_back({order[i], dist[order[i]]});
    return out;
  }

  /// Throws DataError for an unscorable query.
  std::vector<Neighbor> k_nearest(const Triple& query, std::size_t k) const {
    const auto q = represent(query);
    if (!q) throw DataError("unscorable query " + to_display(query) + ": no in-vocabulary head or tail token");
    return k_nearest(*q, k);
  }

  /// First element of k_nearest(q, 1), computed in a single pass.
  Neighbor nearest(const TripleRep& q) const {
    if (empty()) throw DataError("novelty index is empty");
    const auto dist = distances(q);
    std::size_t best = 0;
    for (std::size_t i = 1; i < dist.size(); ++i)
      if (before(dist, i, best)) best = i;
    return {best, dist[best]};
  }

  Neighbor nearest(const Triple& query) const {
    const auto q = represent(query);
    if (!q) throw DataError("unscorable query " + to_display(query) + ": no in-vocabulary head or tail token");
    return nearest(*q);
  }

 private:
  static std::vector<Triple> positives_of(std::span<const LabeledTriple> items) {
    std::vector<Triple> out;
    for (const auto& t : items)
      if (t.positive()) out.push_back(t.triple);
    return out;
  }

  bool before(const std::vector<double>& dist, std::size_t a, std::size_t b) const {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    if (triples_[a] != triples_[b]) return triples_[a] < triples_[b];
    return a < b;
  }

  EmbeddingTable table_;
  std::vector<Triple> triples_;
  Matrix heads_, tails_;
  std::size_t excluded_ = 0;
  std::size_t threads_ = 1;
};

/// Distance to the closest training triple and that triple's position.
inline Neighbor min_distance_to_train(const NoveltyIndex& index, const Triple& query) { return index.nearest(query); }

inline std::vector<Neighbor> k_nearest(const NoveltyIndex& index, const Triple& query, std::size_t k) {
  return index.k_nearest(query, k);
}

// --------------------------------------------------------------- Buckets

enum class ThresholdSource { paper_confidence, paper_random, paper_wikipedia, computed, manual };

inline std::string to_string(ThresholdSource s) {
  switch (s) {
    case ThresholdSource::paper_confidence: return "paper_confidence";
    case ThresholdSource::paper_random: return "paper_random";
    case ThresholdSource::paper_wikipedia: return "paper_wikipedia";
    case ThresholdSource::computed: return "computed";
    case ThresholdSource::manual: return "manual";
  }
  return "?";
}

struct BucketThresholds {
  double q33 = 0.0;
  double q66 = 0.0;
  ThresholdSource source = ThresholdSource::manual;

  /// Published 33%/66% distance quantiles of the ConceptNet
  /// confidence-based test set, the random split, and the Wikipedia
  /// candidates.
  static BucketThresholds paper_confidence() { return {1.93, 2.80, ThresholdSource::paper_confidence}; }
  static BucketThresholds paper_random() { return {2.1, 2.95, ThresholdSource::paper_random}; }
  static BucketThresholds paper_wikipedia() { return {3.21, 4.22, ThresholdSource::paper_wikipedia}; }

  static BucketThresholds manual(double q33, double q66) {
    if (!(q33 >= 0.0 && q33 <= q66)) throw DataError("bucket thresholds need 0 <= q33 <= q66");
    return {q33, q66, ThresholdSource::manual};
  }

  /// Named preset; "computed" is not a preset and throws.
  static BucketThresholds preset(std::string_view name) {
    if (name == "paper_confidence") return paper_confidence();
    if (name == "paper_random") return paper_random();
    if (name == "paper_wikipedia") return paper_wikipedia();
    throw DataError("unknown threshold preset '" + std::string(name) +
                    "' (valid: paper_confidence, paper_random, paper_wikipedia, computed)");
  }
};

/// Quantile by linear interpolation between closest ranks: with sorted
/// x[0..n-1] and h = (n-1)p, x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h]).
inline double quantile(std::vector<double> xs, double p) {
  if (xs.empty()) throw DataError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw DataError("quantile level outside [0, 1]");
  for (double x : xs)
    if (!std::isfinite(x)) throw DataError("quantile of a non-finite value");
  std::sort(xs.begin(), xs.end());
  const double h = static_cast<double>(xs.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline BucketThresholds compute_quantile_thresholds(std::span<const double> distances, double lower = 0.33,
                                                    double upper = 0.66) {
  if (distances.empty()) throw DataError("cannot compute bucket thresholds from no distances");
  std::vector<double> xs(distances.begin(), distances.end());
  BucketThresholds t{quantile(xs, lower), quantile(xs, upper), ThresholdSource::computed};
  return t;
}

enum class Bucket { near = 0, mid = 1, far = 2 };

inline constexpr std::array<Bucket, 3> kBuckets = {Bucket::near, Bucket::mid, Bucket::far};

inline std::string to_string(Bucket b) {
  switch (b) {
    case Bucket::near: return "near";
    case Bucket::mid: return "mid";
    case Bucket::far: return "far";
  }
  return "?";
}

/// Row label in the usual percentile notation.
inline std::string bucket_label(Bucket b) {
  switch (b) {
    case Bucket::near: return "<=33%";
    case Bucket::mid: return "(33%,66%]";
    case Bucket::far: return ">66%";
  }
  return "?";
}

inline Bucket parse_bucket(std::string_view s) {
  if (s == "near") return Bucket::near;
  if (s == "mid") return Bucket::mid;
  if (s == "far") return Bucket::far;
  throw DataError("unknown bucket '" + std::string(s) + "'");
}

inline Bucket bucket_assign(double distance, const BucketThresholds& t) {
  if (distance <= t.q33) return Bucket::near;
  if (distance <= t.q66) return Bucket::mid;
  return Bucket::far;
}

// ------------------------------------------------------------------ Curve

struct CurvePoint {
  std::size_t k = 0;
  double mean_distance = 0.0;
};

struct DistanceCurve {
  std::vector<CurvePoint> points;
  std::size_t unscorable = 0;
};

/// Mean novelty distance of the top K items of a ranking, for each K.
/// Unscorable items are skipped (and counted); K refers to the scorable
/// items in ranking order.
inline DistanceCurve topk_mean_distance_curve(std::span<const Triple> ranked, const NoveltyIndex& index,
                                              std::span<const std::size_t> ks) {
  if (ranked.empty()) throw DataError("distance curve over an empty ranking");
  if (ks.empty()) return {};
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());

  DistanceCurve out;
  std::vector<double> prefix{0.0};  // prefix[i] = sum of the first i distances
  for (const auto& t : ranked) {
    if (prefix.size() - 1 == kmax) break;
    const auto rep = index.represent(t);
    if (!rep) {
      ++out.unscorable;
      continue;
    }
    prefix.push_back(prefix.back() + index.nearest(*rep).distance);
  }
  for (std::size_t k : ks) {
    if (k == 0 || k >= prefix.size())
      throw DataError("K=" + std::to_string(k) + " exceeds the " + std::to_string(prefix.size() - 1) +
                      " scorable ranked items");
    out.points.push_back({k, prefix[k] / static_cast<double>(k)});
  }
  return out;
}

inline void write_curve(std::ostream& out, const DistanceCurve& curve) {
  out << "K\tmean_distance\n";
  for (const auto& p : curve.points) out << p.k << '\t' << text::format_double(p.mean_distance) << '\n';
}

// ------------------------------------------------------------ Correlation

/// Sample Pearson correlation, accumulated with a one-pass co-moment
/// update. Throws NumericalError when either input is constant.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw DataError("pearson: inputs differ in length");
  if (xs.size() < 2) throw DataError("pearson needs at least 2 points");
  double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double n = static_cast<double>(i + 1);
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    mx += dx / n;
    my += dy / n;
    sxx += dx * (xs[i] - mx);
    syy += dy * (ys[i] - my);
    sxy += dx * (ys[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw NumericalError("pearson correlation undefined for constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace kbnovelty
