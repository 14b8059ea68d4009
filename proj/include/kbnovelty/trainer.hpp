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

/** @file trainer.hpp --- Adagrad training, threshold selection and F1. */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kbnovelty/corpus.hpp"
#include "kbnovelty/embeddings.hpp"
#include "kbnovelty/error.hpp"
#include "kbnovelty/scorers.hpp"

namespace kbnovelty {

// ------------------------------------------------------------------ F1

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double threshold = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t unscorable = 0;  // items excluded before counting

  std::size_t count() const noexcept { return tp + fp + tn + fn; }
};

/// Fills precision, recall and f1 from the counts. An empty denominator
/// gives 0 for that quantity.
inline void finish_report(EvalReport& r) {
  r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = r.tp + r.fn > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
}

/// Predict positive iff prob >= threshold.
inline EvalReport f1_report(std::span<const double> probs, std::span<const int> labels, double threshold) {
  if (probs.size() != labels.size()) throw DataError("f1_report: probs and labels differ in length");
  EvalReport r;
  r.threshold = threshold;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    const bool pos = labels[i] != 0;
    if (pred && pos) ++r.tp;
    else if (pred) ++r.fp;
    else if (pos) ++r.fn;
    else ++r.tn;
  }
  finish_report(r);
  return r;
}

/// Threshold maximizing F1 over the candidates -inf, the midpoints between
/// consecutive distinct scores, and +inf. Ties go to the smallest
/// threshold.
inline double select_threshold(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("select_threshold: scores and labels differ in length");
  const auto positives = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
  if (positives == 0 || positives == labels.size())
    throw DataError("select_threshold needs at least one positive and one negative label");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  EvalReport r;
  r.fn = positives;
  r.tn = labels.size() - positives;
  finish_report(r);
  double best_f1 = r.f1;
  double best_threshold = std::numeric_limits<double>::infinity();

  // Walk thresholds from high to low; each step admits one group of equal scores.
  std::size_t i = 0;
  while (i < order.size()) {
    const double group = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == group; ++i) {
      if (labels[order[i]] != 0) {
        ++r.tp;
        --r.fn;
      } else {
        ++r.fp;
        --r.tn;
      }
    }
    double threshold = -std::numeric_limits<double>::infinity();
    if (i < order.size()) {
      const double below = scores[order[i]];
      threshold = group + (below - group) / 2.0;
      if (!(threshold > below)) threshold = group;  // adjacent doubles
    }
    finish_report(r);
    if (r.f1 >= best_f1) {
      best_f1 = r.f1;
      best_threshold = threshold;
    }
  }
  return best_threshold;
}

/// Probability of each scorable item plus its 0/1 label.
struct ScoredSet {
  std::vector<double> probs;
  std::vector<int> labels;
  std::vector<std::size_t> sources;
  std::size_t unscorable = 0;
};

inline ScoredSet score_set(const ScorerParams& p, std::span<const LabeledTriple> items, std::size_t chunk = 4096) {
  const auto enc = encode_all(p, items);
  ScoredSet out;
  out.unscorable = enc.unscorable;
  out.sources = enc.sources;
  out.probs.reserve(enc.examples.size());
  out.labels.reserve(enc.examples.size());
  std::vector<EncodedTriple> batch;
  for (std::size_t start = 0; start < enc.examples.size(); start += chunk) {
    const std::size_t end = std::min(enc.examples.size(), start + chunk);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) batch.push_back(enc.examples[i].triple);
    const Vector s = score_batch(p, batch);
    for (Eigen::Index k = 0; k < s.size(); ++k) out.probs.push_back(predict_prob(s(k)));
    for (std::size_t i = start; i < end; ++i) out.labels.push_back(enc.examples[i].label > 0.5 ? 1 : 0);
  }
  return out;
}

/// Precision, recall and F1 of predict_prob(score) >= threshold.
/// Unscorable items are excluded and counted in the report.
inline EvalReport evaluate_f1(const ScorerParams& p, double threshold, std::span<const LabeledTriple> items) {
  if (items.empty()) throw DataError("evaluate_f1 on an empty set");
  const auto scored = score_set(p, items);
  EvalReport r = f1_report(scored.probs, scored.labels, threshold);
  r.unscorable = scored.unscorable;
  return r;
}

// -------------------------------------------------------------- Adagrad

/// Elementwise: acc += g^2; param -= lr * g / sqrt(acc + eps).
template <class P, class G, class S>
void adagrad_update(P& param, const G& grad, S& acc, double lr, double eps) {
  acc.array() += grad.array().square();
  param.array() -= lr * grad.array() / (acc.array() + eps).sqrt();
}

struct AdagradState {
  ScorerParams accumulators;
  double epsilon = 1e-8;
  bool initialized = false;
};

/// One Adagrad step over every tensor. A non-finite gradient aborts the
/// step before anything is modified.
inline void adagrad_step(ScorerParams& params, const ScorerParams& grads, AdagradState& state, double lr) {
  for_each_tensor(
      [](const std::string& name, const auto& g) {
        if (!g.allFinite()) throw NumericalError("non-finite gradient in tensor '" + name + "'");
      },
      grads);
  if (!state.initialized) {
    state.accumulators = zeros_like(params);
    state.initialized = true;
  }
  for_each_tensor(
      [&](const std::string&, auto& p, const auto& g, auto& acc) {
        if (p.rows() != g.rows() || p.cols() != g.cols() || p.rows() != acc.rows() || p.cols() != acc.cols())
          throw DataError("adagrad_step: shape mismatch");
        adagrad_update(p, g, acc, lr, state.epsilon);
      },
      params, grads, state.accumulators);
}

// ------------------------------------------------------------- Training

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 0;  // 0: 200 for dnn, 600 otherwise
  double l2_weight = 1e-6;
  std::size_t d2 = 1000;
  std::size_t max_epochs = 300;
  std::size_t patience = 10;
  std::size_t neg_ratio = 1;
  std::uint64_t seed = 0;
  Nonlinearity phi = Nonlinearity::relu;
  DnnRelation dnn_relation = DnnRelation::add;

  std::size_t batch_for(ModelKind kind) const {
    if (batch_size > 0) return batch_size;
    return kind == ModelKind::dnn ? 200 : 600;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_f1 = 0.0;
  double threshold = 0.0;
};

struct TrainResult {
  ScorerParams params;  // best-dev parameters
  double threshold = 0.5;
  double best_dev_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
  bool diverged = false;
  std::string message;
  std::size_t skipped_negatives = 0;
  std::size_t unscorable_train = 0;
  std::size_t unscorable_dev = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Minibatch Adagrad with per-epoch negative resampling and early
/// stopping on dev F1.
///
/// Each epoch reshuffles the training positives together with a fresh set
/// of swap negatives, then evaluates on dev with select_threshold.
/// Training stops after max_epochs, or once `patience` consecutive epochs
/// fail to improve dev F1. The returned parameters are those of the best
/// dev epoch. A non-finite loss or gradient stops training early with
/// `diverged` set; the best parameters seen so far are kept.
inline TrainResult train(ModelKind kind, const DatasetSplit& split, const EmbeddingTable& words,
                         const RelationSchema& schema, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  std::vector<LabeledTriple> train_pos, train_fixed_neg;
  for (const auto& t : split.train) (t.positive() ? train_pos : train_fixed_neg).push_back(t);
  if (train_pos.empty()) throw DataError("training set has no positive triples");
  if (split.dev.empty()) throw DataError("dev set is empty");

  ScorerConfig sc = ScorerConfig::for_kind(kind, cfg.d2);
  sc.phi = cfg.phi;
  sc.dnn_relation = cfg.dnn_relation;
  ScorerParams params = init_scorer(sc, words, schema, detail::mix_seed(cfg.seed, 0));

  const auto pos_enc = encode_all(params, train_pos);
  const auto fixed_neg_enc = encode_all(params, train_fixed_neg);
  const auto dev_enc = encode_all(params, split.dev);
  if (pos_enc.examples.empty()) throw DataError("no scorable positive training triples");

  std::vector<EncodedTriple> dev_triples;
  std::vector<int> dev_labels;
  for (const auto& e : dev_enc.examples) {
    dev_triples.push_back(e.triple);
    dev_labels.push_back(e.label > 0.5 ? 1 : 0);
  }

  TrainResult result;
  result.params = params;
  result.unscorable_train = pos_enc.unscorable + fixed_neg_enc.unscorable;
  result.unscorable_dev = dev_enc.unscorable;

  const NegativeSampler sampler(train_pos);
  const std::size_t batch = cfg.batch_for(kind);
  AdagradState opt;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto negs = sampler.sample(train_pos, {cfg.neg_ratio, 20}, detail::mix_seed(cfg.seed, 2 * epoch));
    result.skipped_negatives += negs.skipped;
    std::vector<EncodedExample> examples = pos_enc.examples;
    examples.insert(examples.end(), fixed_neg_enc.examples.begin(), fixed_neg_enc.examples.end());
    for (const auto& n : negs.negatives)
      if (auto e = encode(params, n.triple)) examples.push_back({std::move(*e), 0.0});
    std::mt19937_64 rng(detail::mix_seed(cfg.seed, 2 * epoch + 1));
    std::shuffle(examples.begin(), examples.end(), rng);

    double loss_sum = 0.0;
    bool failed = false;
    for (std::size_t start = 0; start < examples.size(); start += batch) {
      const std::size_t end = std::min(examples.size(), start + batch);
      const std::span<const EncodedExample> mb(examples.data() + start, end - start);
      auto lg = loss_and_gradients(params, mb, cfg.l2_weight);
      if (!std::isfinite(lg.loss)) {
        failed = true;
        result.message = "non-finite loss at epoch " + std::to_string(epoch);
        break;
      }
      try {
        adagrad_step(params, lg.grad, opt, cfg.learning_rate);
      } catch (const NumericalError& e) {
        failed = true;
        result.message = std::string(e.what()) + " at epoch " + std::to_string(epoch);
        break;
      }
      loss_sum += lg.loss * static_cast<double>(end - start);
    }
    if (failed || !all_finite(params)) {
      result.diverged = true;
      if (result.message.empty()) result.message = "non-finite parameters at epoch " + std::to_string(epoch);
      break;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(examples.size());
    const Vector s = score_batch(params, dev_triples);
    std::vector<double> probs(static_cast<std::size_t>(s.size()));
    for (Eigen::Index k = 0; k < s.size(); ++k) probs[static_cast<std::size_t>(k)] = predict_prob(s(k));
    rec.threshold = select_threshold(probs, dev_labels);
    rec.dev_f1 = f1_report(probs, dev_labels, rec.threshold).f1;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.dev_f1 > result.best_dev_f1) {
      result.best_dev_f1 = rec.dev_f1;
      result.best_epoch = epoch;
      result.threshold = rec.threshold;
      result.params = params;
      since_best = 0;
    } else if (++since_best > cfg.patience) {
      break;
    }
  }
  return result;
}

}  // namespace kbnovelty
