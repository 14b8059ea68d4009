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

/** @file scorers.hpp --- triple scoring models.
 *
 * Four models score a triple (h, r, t) where h and t are sums of word
 * vectors and r is a learned relation vector:
 *
 *   factorized    a <Ah+b1, Bt+b2> + b <Ar+b1, Bt+b2> + g <Ar+b1, Bh+b2>
 *   prototypical  the factorized score without the head-tail term
 *   dnn           W . phi(Ah + Cr + Bt + b1) + b2
 *   bilinear      h^T M_r t
 *
 * Projection matrices are stored hidden-by-embedding (d2 x d1) so that
 * `A * h` is literal. Scores pass through a logistic sigmoid; the loss is
 * the mean binary cross-entropy plus an L2 penalty on the word matrix.
 *
 * Gradients are analytic and use the same ScorerParams layout as the
 * parameters, which is what the optimizer and the checkpoint code walk
 * through with for_each_tensor.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "kbnovelty/corpus.hpp"
#include "kbnovelty/embeddings.hpp"
#include "kbnovelty/error.hpp"

namespace kbnovelty {

enum class ModelKind { factorized, prototypical, dnn, bilinear };
enum class Nonlinearity { relu, tanh };
enum class DnnRelation { add, none };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::factorized: return "factorized";
    case ModelKind::prototypical: return "prototypical";
    case ModelKind::dnn: return "dnn";
    case ModelKind::bilinear: return "bilinear";
  }
  return "?";
}

inline std::string to_string(Nonlinearity n) { return n == Nonlinearity::relu ? "relu" : "tanh"; }
inline std::string to_string(DnnRelation r) { return r == DnnRelation::add ? "add" : "none"; }

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "factorized") return ModelKind::factorized;
  if (s == "prototypical") return ModelKind::prototypical;
  if (s == "dnn") return ModelKind::dnn;
  if (s == "bilinear") return ModelKind::bilinear;
  throw DataError("unknown model '" + std::string(s) + "' (valid: factorized, prototypical, dnn, bilinear)");
}

inline Nonlinearity parse_nonlinearity(std::string_view s) {
  if (s == "relu") return Nonlinearity::relu;
  if (s == "tanh") return Nonlinearity::tanh;
  throw DataError("unknown nonlinearity '" + std::string(s) + "' (valid: relu, tanh)");
}

inline DnnRelation parse_dnn_relation(std::string_view s) {
  if (s == "add") return DnnRelation::add;
  if (s == "none") return DnnRelation::none;
  throw DataError("unknown dnn relation mode '" + std::string(s) + "' (valid: add, none)");
}

/// Which of the three factorized terms contribute: head-tail,
/// relation-tail, relation-head.
using TermMask = std::array<bool, 3>;

inline constexpr TermMask kAllTerms = {true, true, true};
inline constexpr TermMask kPrototypicalTerms = {false, true, true};

struct ScorerConfig {
  ModelKind kind = ModelKind::factorized;
  std::size_t d2 = 1000;
  Nonlinearity phi = Nonlinearity::relu;
  DnnRelation dnn_relation = DnnRelation::add;
  TermMask terms = kAllTerms;

  /// Canonical config for a kind (prototypical gets its term mask).
  static ScorerConfig for_kind(ModelKind kind, std::size_t d2 = 1000) {
    ScorerConfig c;
    c.kind = kind;
    c.d2 = d2;
    if (kind == ModelKind::prototypical) c.terms = kPrototypicalTerms;
    return c;
  }
};

/// Parameters of one model. Tensors a kind does not use stay empty.
///
/// The same struct doubles as a gradient set and as Adagrad accumulator
/// storage; zeros_like() produces one with matching shapes.
struct ScorerParams {
  ScorerConfig config;
  std::shared_ptr<const Vocabulary> vocab;
  RelationSchema schema;

  Matrix A, B, C;          // d2 x d1; C is the DNN relation path
  Vector b1, b2;           // b1: d2. b2: d2 (factorized) or 1 (dnn)
  Vector W;                // dnn output weights, d2
  Vector weights;          // alpha, beta, gamma
  std::vector<Matrix> M;   // bilinear, d1 x d1 per relation
  Matrix words;            // d1 x |vocab|, trainable
  Matrix relations;        // d1 x |schema| (unused by bilinear)

  ModelKind kind() const noexcept { return config.kind; }
  std::size_t d1() const noexcept { return static_cast<std::size_t>(words.rows()); }
  std::size_t d2() const noexcept { return config.d2; }

  bool uses_relation_vectors() const noexcept { return config.kind != ModelKind::bilinear; }
  bool uses_relation_path() const noexcept {
    return config.kind == ModelKind::dnn && config.dnn_relation == DnnRelation::add;
  }

  /// The current word matrix wrapped as an (unfrozen) table.
  EmbeddingTable word_table() const { return EmbeddingTable(vocab, words, false); }
};

/// Calls f(name, tensor, other_tensor...) for every tensor the model uses,
/// in a fixed order. All arguments must share one config.
template <class F, class P, class... Ps>
void for_each_tensor(F&& f, P& p, Ps&... ps) {
  switch (p.config.kind) {
    case ModelKind::factorized:
    case ModelKind::prototypical:
      f("A", p.A, ps.A...);
      f("B", p.B, ps.B...);
      f("b1", p.b1, ps.b1...);
      f("b2", p.b2, ps.b2...);
      f("weights", p.weights, ps.weights...);
      break;
    case ModelKind::dnn:
      f("A", p.A, ps.A...);
      f("B", p.B, ps.B...);
      if (p.uses_relation_path()) f("C", p.C, ps.C...);
      f("b1", p.b1, ps.b1...);
      f("W", p.W, ps.W...);
      f("b2", p.b2, ps.b2...);
      break;
    case ModelKind::bilinear:
      for (std::size_t r = 0; r < p.M.size(); ++r) f("M." + p.schema.name(r), p.M[r], ps.M[r]...);
      break;
  }
  f("words", p.words, ps.words...);
  if (p.uses_relation_vectors()) f("relations", p.relations, ps.relations...);
}

/// Same shapes and metadata as `p`, every tensor zero.
inline ScorerParams zeros_like(const ScorerParams& p) {
  ScorerParams z = p;
  for_each_tensor([](const std::string&, auto& t) { t.setZero(); }, z);
  return z;
}

inline bool all_finite(const ScorerParams& p) {
  bool ok = true;
  for_each_tensor([&ok](const std::string&, const auto& t) { ok = ok && t.allFinite(); }, p);
  return ok;
}

/// Throws DataError when a tensor's shape is inconsistent with the config.
inline void validate(const ScorerParams& p) {
  const auto d1 = static_cast<Eigen::Index>(p.d1());
  const auto d2 = static_cast<Eigen::Index>(p.d2());
  auto expect = [](bool ok, const char* what) {
    if (!ok) throw DataError(std::string("scorer parameters: bad shape for ") + what);
  };
  expect(p.vocab && static_cast<std::size_t>(p.words.cols()) == p.vocab->size(), "words");
  switch (p.kind()) {
    case ModelKind::factorized:
    case ModelKind::prototypical:
      expect(p.A.rows() == d2 && p.A.cols() == d1, "A");
      expect(p.B.rows() == d2 && p.B.cols() == d1, "B");
      expect(p.b1.size() == d2 && p.b2.size() == d2, "b1/b2");
      expect(p.weights.size() == 3, "weights");
      break;
    case ModelKind::dnn:
      expect(p.A.rows() == d2 && p.A.cols() == d1, "A");
      expect(p.B.rows() == d2 && p.B.cols() == d1, "B");
      if (p.uses_relation_path()) expect(p.C.rows() == d2 && p.C.cols() == d1, "C");
      expect(p.b1.size() == d2 && p.W.size() == d2 && p.b2.size() == 1, "b1/W/b2");
      break;
    case ModelKind::bilinear:
      expect(p.M.size() == p.schema.size(), "M");
      for (const auto& m : p.M) expect(m.rows() == d1 && m.cols() == d1, "M");
      break;
  }
  if (p.uses_relation_vectors())
    expect(p.relations.rows() == d1 && static_cast<std::size_t>(p.relations.cols()) == p.schema.size(), "relations");
  if (!all_finite(p)) throw DataError("scorer parameters contain non-finite values");
}

/// Fresh parameters. Projections are uniform in +-sqrt(6/(fan_in+fan_out)),
/// biases zero, alpha = beta = gamma = 1, relation vectors N(0, 0.05^2)
/// and word vectors copied from `words`.
inline ScorerParams init_scorer(const ScorerConfig& config, const EmbeddingTable& words, const RelationSchema& schema,
                                std::uint64_t seed) {
  if (config.d2 == 0) throw DataError("hidden size d2 must be positive");
  ScorerParams p;
  p.config = config;
  p.vocab = words.vocab_ptr();
  p.schema = schema;
  p.words = words.vectors();

  const auto d1 = static_cast<Eigen::Index>(words.dim());
  const auto d2 = static_cast<Eigen::Index>(config.d2);
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](Eigen::Index rows, Eigen::Index cols, double fan) {
    const double limit = std::sqrt(6.0 / fan);
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
    return m;
  };
  const double fan = static_cast<double>(d1 + d2);

  switch (config.kind) {
    case ModelKind::factorized:
    case ModelKind::prototypical:
      p.A = uniform(d2, d1, fan);
      p.B = uniform(d2, d1, fan);
      p.b1 = Vector::Zero(d2);
      p.b2 = Vector::Zero(d2);
      p.weights = Vector::Ones(3);
      break;
    case ModelKind::dnn:
      p.A = uniform(d2, d1, fan);
      p.B = uniform(d2, d1, fan);
      if (p.uses_relation_path()) p.C = uniform(d2, d1, fan);
      p.b1 = Vector::Zero(d2);
      p.W = uniform(d2, 1, static_cast<double>(d2 + 1));
      p.b2 = Vector::Zero(1);
      break;
    case ModelKind::bilinear:
      for (std::size_t r = 0; r < schema.size(); ++r) p.M.push_back(uniform(d1, d1, 2.0 * static_cast<double>(d1)));
      break;
  }
  if (p.uses_relation_vectors())
    p.relations = init_relation_embeddings(schema, words.dim(), rng()).vectors;
  return p;
}

// ------------------------------------------------------------- Encoding

/// A triple resolved to vocabulary and schema ids.
struct EncodedTriple {
  std::size_t relation = 0;
  std::vector<int> head;  // in-vocabulary token ids
  std::vector<int> tail;
};

struct EncodedExample {
  EncodedTriple triple;
  double label = 0.0;  // 1 positive, 0 negative
};

/// std::nullopt when head or tail has no in-vocabulary token
/// (an unscorable triple). Unknown relations throw DataError.
inline std::optional<EncodedTriple> encode(const ScorerParams& p, const Triple& t) {
  EncodedTriple e;
  e.relation = p.schema.id(t.relation);
  for (const auto* phrase : {&t.head, &t.tail}) {
    auto& ids = phrase == &t.head ? e.head : e.tail;
    for (const auto& w : phrase->words()) {
      const int id = p.vocab->find(w);
      if (id >= 0) ids.push_back(id);
    }
  }
  if (e.head.empty() || e.tail.empty()) return std::nullopt;
  return e;
}

struct EncodedSet {
  std::vector<EncodedExample> examples;
  std::vector<std::size_t> sources;  // index into the input, per example
  std::size_t unscorable = 0;
};

inline EncodedSet encode_all(const ScorerParams& p, std::span<const LabeledTriple> triples) {
  EncodedSet out;
  out.examples.reserve(triples.size());
  for (std::size_t i = 0; i < triples.size(); ++i) {
    auto e = encode(p, triples[i].triple);
    if (!e) {
      ++out.unscorable;
      continue;
    }
    out.examples.push_back({std::move(*e), triples[i].positive() ? 1.0 : 0.0});
    out.sources.push_back(i);
  }
  return out;
}

// --------------------------------------------------------------- Forward

namespace detail {

/// Column-stacked phrase sums and relation vectors for a batch.
struct BatchInputs {
  Matrix H, T, R;
};

inline Vector sum_columns(const Matrix& words, const std::vector<int>& ids) {
  Vector v = Vector::Zero(words.rows());
  for (int id : ids) v += words.col(id);
  return v;
}

template <class Get>
BatchInputs gather(const ScorerParams& p, std::size_t n, Get&& get) {
  const auto d1 = static_cast<Eigen::Index>(p.d1());
  BatchInputs in{Matrix(d1, static_cast<Eigen::Index>(n)), Matrix(d1, static_cast<Eigen::Index>(n)), Matrix()};
  if (p.uses_relation_vectors()) in.R.resize(d1, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const EncodedTriple& t = get(i);
    const auto c = static_cast<Eigen::Index>(i);
    in.H.col(c) = sum_columns(p.words, t.head);
    in.T.col(c) = sum_columns(p.words, t.tail);
    if (p.uses_relation_vectors()) in.R.col(c) = p.relations.col(static_cast<Eigen::Index>(t.relation));
  }
  return in;
}

inline Matrix apply_phi(Nonlinearity phi, const Matrix& z) {
  return phi == Nonlinearity::relu ? Matrix(z.cwiseMax(0.0)) : Matrix(z.array().tanh().matrix());
}

inline Matrix phi_derivative(Nonlinearity phi, const Matrix& z) {
  if (phi == Nonlinearity::relu) return (z.array() > 0.0).cast<double>().matrix();
  return (1.0 - z.array().tanh().square()).matrix();
}

/// Intermediate activations kept for the backward pass.
struct Forward {
  BatchInputs in;
  Matrix AH, BT, AR, BH;  // factorized family
  Matrix Z, U;            // dnn
  Vector scores;
};

template <class Get>
Forward forward(const ScorerParams& p, std::size_t n, Get&& get) {
  Forward f;
  f.in = gather(p, n, get);
  f.scores = Vector::Zero(static_cast<Eigen::Index>(n));
  switch (p.kind()) {
    case ModelKind::factorized:
    case ModelKind::prototypical: {
      const auto& m = p.config.terms;
      if (m[0]) f.AH = (p.A * f.in.H).colwise() + p.b1;
      if (m[0] || m[1]) f.BT = (p.B * f.in.T).colwise() + p.b2;
      if (m[1] || m[2]) f.AR = (p.A * f.in.R).colwise() + p.b1;
      if (m[2]) f.BH = (p.B * f.in.H).colwise() + p.b2;
      if (m[0]) f.scores += p.weights(0) * f.AH.cwiseProduct(f.BT).colwise().sum().transpose();
      if (m[1]) f.scores += p.weights(1) * f.AR.cwiseProduct(f.BT).colwise().sum().transpose();
      if (m[2]) f.scores += p.weights(2) * f.AR.cwiseProduct(f.BH).colwise().sum().transpose();
      break;
    }
    case ModelKind::dnn: {
      f.Z = p.A * f.in.H + p.B * f.in.T;
      if (p.uses_relation_path()) f.Z += p.C * f.in.R;
      f.Z.colwise() += p.b1;
      f.U = apply_phi(p.config.phi, f.Z);
      f.scores = (f.U.transpose() * p.W).array() + p.b2(0);
      break;
    }
    case ModelKind::bilinear: {
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        f.scores(c) = f.in.H.col(c).dot(p.M[get(i).relation] * f.in.T.col(c));
      }
      break;
    }
  }
  return f;
}

/// Accumulates d(sum_i g_i * score_i) into `grad`.
template <class Get>
void backward(const ScorerParams& p, const Forward& f, const Vector& g, std::size_t n, Get&& get, ScorerParams& grad) {
  Matrix dH, dT, dR;
  switch (p.kind()) {
    case ModelKind::factorized:
    case ModelKind::prototypical: {
      const auto& m = p.config.terms;
      const auto d2 = static_cast<Eigen::Index>(p.d2());
      const auto cols = static_cast<Eigen::Index>(n);
      Matrix dAH = Matrix::Zero(d2, cols), dBT = Matrix::Zero(d2, cols);
      Matrix dAR = Matrix::Zero(d2, cols), dBH = Matrix::Zero(d2, cols);
      if (m[0]) {
        grad.weights(0) += g.dot(f.AH.cwiseProduct(f.BT).colwise().sum().transpose());
        const Vector wg = p.weights(0) * g;
        dAH += f.BT * wg.asDiagonal();
        dBT += f.AH * wg.asDiagonal();
      }
      if (m[1]) {
        grad.weights(1) += g.dot(f.AR.cwiseProduct(f.BT).colwise().sum().transpose());
        const Vector wg = p.weights(1) * g;
        dAR += f.BT * wg.asDiagonal();
        dBT += f.AR * wg.asDiagonal();
      }
      if (m[2]) {
        grad.weights(2) += g.dot(f.AR.cwiseProduct(f.BH).colwise().sum().transpose());
        const Vector wg = p.weights(2) * g;
        dAR += f.BH * wg.asDiagonal();
        dBH += f.AR * wg.asDiagonal();
      }
      grad.A += dAH * f.in.H.transpose() + dAR * f.in.R.transpose();
      grad.B += dBT * f.in.T.transpose() + dBH * f.in.H.transpose();
      grad.b1 += (dAH + dAR).rowwise().sum();
      grad.b2 += (dBT + dBH).rowwise().sum();
      dH = p.A.transpose() * dAH + p.B.transpose() * dBH;
      dT = p.B.transpose() * dBT;
      dR = p.A.transpose() * dAR;
      break;
    }
    case ModelKind::dnn: {
      grad.W += f.U * g;
      grad.b2(0) += g.sum();
      const Matrix dZ = (p.W * g.transpose()).cwiseProduct(phi_derivative(p.config.phi, f.Z));
      grad.A += dZ * f.in.H.transpose();
      grad.B += dZ * f.in.T.transpose();
      grad.b1 += dZ.rowwise().sum();
      dH = p.A.transpose() * dZ;
      dT = p.B.transpose() * dZ;
      if (p.uses_relation_path()) {
        grad.C += dZ * f.in.R.transpose();
        dR = p.C.transpose() * dZ;
      }
      break;
    }
    case ModelKind::bilinear: {
      const auto d1 = static_cast<Eigen::Index>(p.d1());
      dH.resize(d1, static_cast<Eigen::Index>(n));
      dT.resize(d1, static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        const Matrix& Mr = p.M[get(i).relation];
        grad.M[get(i).relation] += g(c) * f.in.H.col(c) * f.in.T.col(c).transpose();
        dH.col(c) = g(c) * (Mr * f.in.T.col(c));
        dT.col(c) = g(c) * (Mr.transpose() * f.in.H.col(c));
      }
      break;
    }
  }
  // Phrase vectors are sums, so every token receives the full phrase gradient.
  for (std::size_t i = 0; i < n; ++i) {
    const EncodedTriple& t = get(i);
    const auto c = static_cast<Eigen::Index>(i);
    for (int id : t.head) grad.words.col(id) += dH.col(c);
    for (int id : t.tail) grad.words.col(id) += dT.col(c);
    if (dR.size() > 0) grad.relations.col(static_cast<Eigen::Index>(t.relation)) += dR.col(c);
  }
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid_unclamped(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

}  // namespace detail

/// Scores for a batch of encoded triples.
inline Vector score_batch(const ScorerParams& p, std::span<const EncodedTriple> batch) {
  return detail::forward(p, batch.size(), [&](std::size_t i) -> const EncodedTriple& { return batch[i]; }).scores;
}

inline double score(const ScorerParams& p, const EncodedTriple& t) {
  return score_batch(p, std::span<const EncodedTriple>(&t, 1))(0);
}

/// std::nullopt for an unscorable triple.
inline std::optional<double> score(const ScorerParams& p, const Triple& t) {
  const auto e = encode(p, t);
  if (!e) return std::nullopt;
  return score(p, *e);
}

/// Logistic sigmoid, kept strictly inside (0, 1) even when saturated.
inline double predict_prob(double s) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  return std::clamp(detail::sigmoid_unclamped(s), lo, hi);
}

// ------------------------------------------------------------------ Loss

/// Squared Frobenius norm of the trainable word matrix.
inline double word_l2(const ScorerParams& p) { return p.words.squaredNorm(); }

struct LossAndGradients {
  double loss = 0.0;
  ScorerParams grad;
};

/// Mean cross-entropy of sigmoid(score) against the labels, plus
/// l2_weight * ||words||^2. The cross-entropy is evaluated in log space
/// (softplus) so it stays finite for any finite score.
inline double batch_loss(const ScorerParams& p, std::span<const EncodedExample> batch, double l2_weight) {
  if (batch.empty()) throw DataError("batch_loss on an empty batch");
  const auto f = detail::forward(p, batch.size(), [&](std::size_t i) -> const EncodedTriple& { return batch[i].triple; });
  double ce = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double s = f.scores(static_cast<Eigen::Index>(i));
    ce += detail::softplus(s) - batch[i].label * s;
  }
  return ce / static_cast<double>(batch.size()) + l2_weight * word_l2(p);
}

/// batch_loss and its exact gradient with respect to every tensor.
inline LossAndGradients loss_and_gradients(const ScorerParams& p, std::span<const EncodedExample> batch,
                                           double l2_weight) {
  if (batch.empty()) throw DataError("gradients on an empty batch");
  auto get = [&](std::size_t i) -> const EncodedTriple& { return batch[i].triple; };
  const auto f = detail::forward(p, batch.size(), get);
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  LossAndGradients out{0.0, zeros_like(p)};
  Vector g(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const double s = f.scores(c);
    out.loss += detail::softplus(s) - batch[i].label * s;
    g(c) = (detail::sigmoid_unclamped(s) - batch[i].label) * inv_n;
  }
  out.loss = out.loss * inv_n + l2_weight * word_l2(p);
  detail::backward(p, f, g, batch.size(), get, out.grad);
  if (l2_weight != 0.0) out.grad.words += (2.0 * l2_weight) * p.words;
  return out;
}

inline ScorerParams gradients(const ScorerParams& p, std::span<const EncodedExample> batch, double l2_weight) {
  return loss_and_gradients(p, batch, l2_weight).grad;
}

/// Convenience overload over labeled triples; unscorable ones are dropped.
inline double batch_loss(const ScorerParams& p, std::span<const LabeledTriple> batch, double l2_weight) {
  const auto enc = encode_all(p, batch);
  return batch_loss(p, std::span<const EncodedExample>(enc.examples), l2_weight);
}

inline ScorerParams gradients(const ScorerParams& p, std::span<const LabeledTriple> batch, double l2_weight) {
  const auto enc = encode_all(p, batch);
  return gradients(p, std::span<const EncodedExample>(enc.examples), l2_weight);
}

}  // namespace kbnovelty
