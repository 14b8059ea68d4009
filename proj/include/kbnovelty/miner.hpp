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

/** @file miner.hpp --- candidate reranking, per-bucket top lists,
 *  annotation sheets and annotator agreement.
 *
 * Ranked output TSV columns:
 *
 *     rank relation head tail score prob distance bucket
 *
 * Annotation sheets start with a "# scale=<min>..<max>" comment, then a
 * header and one row per candidate:
 *
 *     bucket rank relation head tail prob distance
 *     neighbor_1 distance_1 ... neighbor_k distance_k score
 *
 * The score column is left empty for annotators. Completed sheets are
 * matched on (bucket, rank), so edits to the text columns are harmless.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kbnovelty/corpus.hpp"
#include "kbnovelty/error.hpp"
#include "kbnovelty/novelty.hpp"
#include "kbnovelty/scorers.hpp"
#include "kbnovelty/text.hpp"

namespace kbnovelty {

struct RankedCandidate {
  Triple triple;
  double score = 0.0;
  double prob = 0.5;
  double novelty_distance = 0.0;
  Bucket bucket = Bucket::near;
  std::size_t source_line = 0;
};

namespace detail {

/// Ranking order: higher score first, earlier input line on ties.
inline bool ranks_before(const RankedCandidate& a, const RankedCandidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.source_line < b.source_line;
}

/// Keeps the `cap` best candidates seen so far; memory is O(cap).
class TopKeeper {
 public:
  explicit TopKeeper(std::optional<std::size_t> cap) : cap_(cap) {}

  bool full() const { return cap_ && heap_.size() >= *cap_; }

  /// Would `c` be retained if offered now?
  bool admits(const RankedCandidate& c) const {
    if (cap_ && *cap_ == 0) return false;
    return !full() || ranks_before(c, heap_.front());
  }

  void offer(RankedCandidate c) {
    if (!admits(c)) return;
    if (full()) {
      std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
      heap_.pop_back();
    }
    heap_.push_back(std::move(c));
    std::push_heap(heap_.begin(), heap_.end(), ranks_before);
  }

  std::vector<RankedCandidate> take_sorted() {
    std::vector<RankedCandidate> out = std::move(heap_);
    heap_.clear();
    std::sort(out.begin(), out.end(), ranks_before);
    return out;
  }

 private:
  std::optional<std::size_t> cap_;
  std::vector<RankedCandidate> heap_;  // max-heap on "worst first"
};

}  // namespace detail

struct RerankOptions {
  std::optional<std::size_t> top_n;        // keep only the best N overall
  std::optional<std::size_t> per_bucket;   // also keep the best k of each bucket
  bool dedup = false;                      // drop repeated candidate triples
  std::size_t chunk = 4096;                // candidates scored per batch
  const RelationSchema* schema = nullptr;  // validate candidate relations
};

struct RerankResult {
  std::vector<RankedCandidate> ranked;                      // descending by score
  std::array<std::vector<RankedCandidate>, 3> buckets;      // when per_bucket is set
  std::size_t read = 0;
  std::size_t unscorable = 0;
  std::size_t duplicates = 0;
};

/// Scores every candidate of a triple TSV stream and ranks them.
///
/// Candidates are read and scored in fixed-size chunks; with top_n and/or
/// per_bucket set, only the retained candidates are kept in memory. The
/// novelty distance of a candidate is computed only when it could still
/// enter one of the retained lists, which leaves results unchanged.
/// Unscorable candidates are counted and dropped.
inline RerankResult rerank(std::istream& candidates, const ScorerParams& params, const NoveltyIndex& index,
                           const BucketThresholds& thresholds, const RerankOptions& opts = {}) {
  RerankResult out;
  TripleReader reader(candidates, {false, opts.schema});
  detail::TopKeeper global(opts.top_n);
  std::array<detail::TopKeeper, 3> per_bucket{detail::TopKeeper(opts.per_bucket), detail::TopKeeper(opts.per_bucket),
                                               detail::TopKeeper(opts.per_bucket)};
  TripleSet seen;

  struct Pending {
    Triple triple;
    std::size_t line;
    EncodedTriple enc;
    TripleRep rep;
  };
  std::vector<Pending> chunk;
  std::vector<EncodedTriple> batch;
  const std::size_t chunk_size = std::max<std::size_t>(1, opts.chunk);

  auto flush = [&] {
    if (chunk.empty()) return;
    batch.clear();
    for (const auto& p : chunk) batch.push_back(p.enc);
    const Vector scores = score_batch(params, batch);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      RankedCandidate c;
      c.score = scores(static_cast<Eigen::Index>(i));
      c.prob = predict_prob(c.score);
      c.source_line = chunk[i].line;
      const bool want_global = global.admits(c);
      bool want_bucket = false;
      if (opts.per_bucket)
        for (const auto& k : per_bucket) want_bucket = want_bucket || k.admits(c);
      if (!want_global && !want_bucket) continue;
      c.triple = std::move(chunk[i].triple);
      c.novelty_distance = index.nearest(chunk[i].rep).distance;
      c.bucket = bucket_assign(c.novelty_distance, thresholds);
      if (want_bucket) per_bucket[static_cast<std::size_t>(c.bucket)].offer(c);
      if (want_global) global.offer(std::move(c));
    }
    chunk.clear();
  };

  while (auto rec = reader.next()) {
    ++out.read;
    if (opts.dedup && !seen.insert(rec->triple).second) {
      ++out.duplicates;
      continue;
    }
    auto enc = encode(params, rec->triple);
    auto rep = enc ? index.represent(rec->triple) : std::nullopt;
    if (!enc || !rep) {
      ++out.unscorable;
      continue;
    }
    chunk.push_back({std::move(rec->triple), reader.line(), std::move(*enc), std::move(*rep)});
    if (chunk.size() >= chunk_size) flush();
  }
  flush();

  out.ranked = global.take_sorted();
  if (opts.per_bucket)
    for (std::size_t b = 0; b < 3; ++b) out.buckets[b] = per_bucket[b].take_sorted();
  return out;
}

/// Novelty distance of every scorable candidate in a stream, in input
/// order; the input for computed bucket thresholds.
inline std::vector<double> candidate_distances(std::istream& candidates, const NoveltyIndex& index,
                                               const RelationSchema* schema = nullptr) {
  TripleReader reader(candidates, {false, schema});
  std::vector<double> out;
  while (auto rec = reader.next())
    if (const auto rep = index.represent(rec->triple)) out.push_back(index.nearest(*rep).distance);
  return out;
}

struct BucketedTopK {
  std::array<std::vector<RankedCandidate>, 3> lists;
  std::vector<std::string> warnings;  // buckets with fewer than k members
};

/// Per bucket, the first k candidates of a score-ordered ranking.
inline BucketedTopK bucketed_topk(std::span<const RankedCandidate> ranked, std::size_t k) {
  BucketedTopK out;
  for (const auto& c : ranked) {
    auto& list = out.lists[static_cast<std::size_t>(c.bucket)];
    if (list.size() < k) list.push_back(c);
  }
  for (Bucket b : kBuckets) {
    const auto n = out.lists[static_cast<std::size_t>(b)].size();
    if (n < k)
      out.warnings.push_back("bucket " + to_string(b) + " has only " + std::to_string(n) + " of " +
                             std::to_string(k) + " requested candidates");
  }
  return out;
}

inline void write_ranked(std::ostream& out, std::span<const RankedCandidate> ranked) {
  out << "rank\trelation\thead\ttail\tscore\tprob\tdistance\tbucket\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& c = ranked[i];
    out << (i + 1) << '\t';
    write_triple_line(out, c.triple);
    out << '\t' << text::format_double(c.score) << '\t' << text::format_double(c.prob) << '\t'
        << text::format_double(c.novelty_distance) << '\t' << to_string(c.bucket) << '\n';
  }
}

/// Triples of a ranked TSV (or of a plain triple TSV), in file order.
inline std::vector<Triple> read_ranked_triples(std::istream& in) {
  std::vector<Triple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty() || line.front() == '#' || line.rfind("rank\t", 0) == 0) continue;
    const auto fields = text::split(line, '\t');
    if (fields.size() == 8) {
      out.push_back(detail::parse_triple_fields(std::span(fields).subspan(1, 3), lineno, nullptr));
    } else if (fields.size() == 3 || fields.size() == 4) {
      out.push_back(detail::parse_triple_fields(fields, lineno, nullptr));
    } else {
      throw ParseError(lineno, "expected a ranked row (8 fields) or a triple row (3-4 fields)");
    }
  }
  return out;
}

// ----------------------------------------------------- Annotation sheets

struct AnnotationScale {
  int min = 1;
  int max = 5;
};

/// Writes one sheet row per candidate of every bucket list, bucket by
/// bucket, with the k nearest training triples as evidence.
inline void export_annotation_sheet(std::ostream& out, const std::array<std::vector<RankedCandidate>, 3>& lists,
                                    const NoveltyIndex& index, std::size_t k_neighbors = 5,
                                    AnnotationScale scale = {}) {
  if (scale.min > scale.max) throw DataError("annotation scale min exceeds max");
  out << "# scale=" << scale.min << ".." << scale.max << '\n';
  out << "bucket\trank\trelation\thead\ttail\tprob\tdistance";
  for (std::size_t j = 1; j <= k_neighbors; ++j) out << "\tneighbor_" << j << "\tdistance_" << j;
  out << "\tscore\n";
  for (Bucket b : kBuckets) {
    const auto& list = lists[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& c = list[i];
      out << to_string(b) << '\t' << (i + 1) << '\t';
      write_triple_line(out, c.triple);
      out << '\t' << text::format_double(c.prob) << '\t' << text::format_double(c.novelty_distance);
      const auto nn = index.k_nearest(c.triple, k_neighbors);
      for (std::size_t j = 0; j < k_neighbors; ++j) {
        if (j < nn.size())
          out << '\t' << to_display(index.triple(nn[j].index)) << '\t' << text::format_double(nn[j].distance);
        else
          out << "\t\t";
      }
      out << "\t\n";
    }
  }
}

using SheetKey = std::pair<std::string, std::size_t>;  // (bucket, rank)

/// Scores of a completed sheet, keyed by (bucket, rank). Every row must
/// carry an integer score inside the sheet's scale.
inline std::map<SheetKey, int> read_completed_sheet(std::istream& in) {
  std::map<SheetKey, int> scores;
  AnnotationScale scale;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("# scale=", 0) == 0) {
      const auto spec = std::string_view(line).substr(8);
      const auto dots = spec.find("..");
      const auto lo = dots == std::string_view::npos ? std::nullopt : text::parse_int(spec.substr(0, dots));
      const auto hi = dots == std::string_view::npos ? std::nullopt : text::parse_int(spec.substr(dots + 2));
      if (!lo || !hi || *lo > *hi) throw ParseError(lineno, "bad scale line");
      scale = {static_cast<int>(*lo), static_cast<int>(*hi)};
      continue;
    }
    if (text::trim(line).empty() || line.front() == '#') continue;
    const auto fields = text::split(line, '\t');
    if (!header) {
      if (fields.empty() || fields.front() != "bucket" || fields.back() != "score")
        throw ParseError(lineno, "missing annotation sheet header");
      header = true;
      continue;
    }
    if (fields.size() < 8) throw ParseError(lineno, "annotation row has too few fields");
    const std::string bucket(fields[0]);
    parse_bucket(bucket);
    const auto rank = text::parse_int(fields[1]);
    if (!rank || *rank < 1) throw ParseError(lineno, "bad rank");
    const auto score = text::parse_int(fields.back());
    if (!score) throw ParseError(lineno, "missing or non-integer score");
    if (*score < scale.min || *score > scale.max)
      throw ParseError(lineno, "score " + std::to_string(*score) + " outside scale " + std::to_string(scale.min) +
                                   ".." + std::to_string(scale.max));
    if (!scores.emplace(SheetKey{bucket, static_cast<std::size_t>(*rank)}, static_cast<int>(*score)).second)
      throw ParseError(lineno, "duplicate (bucket, rank) row");
  }
  return scores;
}

// ------------------------------------------------------------- Agreement

struct AgreementStats {
  double pearson = 0.0;
  double cohen_kappa = 0.0;
  double mean_of_averages = 0.0;  // mean over items of the two annotators' average
  std::size_t items = 0;
};

/// Cohen's kappa over exact-category agreement.
inline double cohen_kappa(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size() || a.empty()) throw DataError("cohen_kappa needs two equal-length, non-empty inputs");
  const double n = static_cast<double>(a.size());
  std::map<int, std::pair<double, double>> marginals;
  double agree = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    marginals[a[i]].first += 1.0;
    marginals[b[i]].second += 1.0;
    if (a[i] == b[i]) agree += 1.0;
  }
  const double p_o = agree / n;
  double p_e = 0.0;
  for (const auto& [cat, m] : marginals) p_e += (m.first / n) * (m.second / n);
  if (p_e >= 1.0) throw NumericalError("cohen kappa undefined: chance agreement is 1");
  return (p_o - p_e) / (1.0 - p_e);
}

inline AgreementStats agreement_stats(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw DataError("annotators scored different numbers of items");
  if (a.size() < 2) throw DataError("agreement needs at least 2 items");
  AgreementStats s;
  s.items = a.size();
  const std::vector<double> xa(a.begin(), a.end()), xb(b.begin(), b.end());
  s.pearson = pearson(xa, xb);
  s.cohen_kappa = cohen_kappa(a, b);
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += (xa[i] + xb[i]) / 2.0;
  s.mean_of_averages = total / static_cast<double>(a.size());
  return s;
}

/// Agreement between two completed sheets over their shared keys; a key
/// present in only one sheet is an error.
inline AgreementStats agreement_from_sheets(const std::map<SheetKey, int>& first,
                                            const std::map<SheetKey, int>& second) {
  std::vector<int> a, b;
  for (const auto& [key, score] : first) {
    const auto it = second.find(key);
    if (it == second.end())
      throw DataError("row (" + key.first + ", " + std::to_string(key.second) + ") missing from second sheet");
    a.push_back(score);
    b.push_back(it->second);
  }
  if (first.size() != second.size()) throw DataError("second sheet has rows missing from the first");
  return agreement_stats(a, b);
}

}  // namespace kbnovelty
