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

/** @file embeddings.hpp --- word vectors, phrase composition and
 *  relation vectors.
 *
 * Word vectors use the word2vec text layout: a "vocab_size dim" header,
 * then one "word v1 ... v_dim" line per word, space separated.
 *
 * A loaded table is used twice: as-is (frozen) by the novelty metric, and
 * as the initial value of the trainable embedding matrix of a scorer.
 * Both share one Vocabulary, so copying a table never copies the words.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kbnovelty/corpus.hpp"
#include "kbnovelty/error.hpp"
#include "kbnovelty/text.hpp"

namespace kbnovelty {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Word <-> dense id map.
class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> words) {
    for (auto& w : words) {
      if (!add(std::move(w))) throw DataError("duplicate word in vocabulary");
    }
  }

  /// False when the word is already present.
  bool add(std::string word) {
    const auto [it, inserted] = ids_.emplace(word, static_cast<int>(words_.size()));
    if (inserted) words_.push_back(std::move(word));
    return inserted;
  }

  int find(std::string_view word) const {
    const auto it = ids_.find(std::string(word));
    return it == ids_.end() ? -1 : it->second;
  }

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const noexcept { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

/// Phrase vector plus the number of in-vocabulary tokens that built it.
struct ComposedVector {
  Vector vec;
  std::size_t in_vocab = 0;

  bool oov() const noexcept { return in_vocab == 0; }
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  /// `vectors` holds one column per vocabulary word.
  EmbeddingTable(std::shared_ptr<const Vocabulary> vocab, Matrix vectors, bool frozen = true)
      : vocab_(std::move(vocab)), vectors_(std::move(vectors)), frozen_(frozen) {
    if (!vocab_) throw DataError("embedding table without vocabulary");
    if (static_cast<std::size_t>(vectors_.cols()) != vocab_->size())
      throw DataError("embedding matrix has " + std::to_string(vectors_.cols()) + " columns for " +
                      std::to_string(vocab_->size()) + " words");
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors_.rows()); }
  std::size_t size() const noexcept { return static_cast<std::size_t>(vectors_.cols()); }
  bool frozen() const noexcept { return frozen_; }

  const Vocabulary& vocab() const { return *vocab_; }
  const std::shared_ptr<const Vocabulary>& vocab_ptr() const noexcept { return vocab_; }

  const Matrix& vectors() const noexcept { return vectors_; }
  Matrix& mutable_vectors() {
    if (frozen_) throw Error("attempt to modify a frozen embedding table");
    return vectors_;
  }

  int find(std::string_view word) const { return vocab_->find(word); }

  /// Column for a present word; throws DataError for an absent one.
  auto vector(std::string_view word) const {
    const int id = find(word);
    if (id < 0) throw DataError("word '" + std::string(word) + "' not in embedding table");
    return vectors_.col(id);
  }

  /// Copy that may be modified (a scorer's trainable embeddings).
  EmbeddingTable trainable_copy() const { return EmbeddingTable(vocab_, vectors_, false); }

 private:
  std::shared_ptr<const Vocabulary> vocab_ = std::make_shared<Vocabulary>();
  Matrix vectors_;
  bool frozen_ = true;
};

/// Parses the word2vec text format. Errors carry the 1-based line number.
inline EmbeddingTable load_word_vectors(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t vocab_size = 0, dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!text::trim(line).empty()) break;
  }
  {
    const auto header = text::split(text::trim(line), ' ');
    const auto n = header.size() == 2 ? text::parse_int(header[0]) : std::nullopt;
    const auto d = header.size() == 2 ? text::parse_int(header[1]) : std::nullopt;
    if (!n || !d || *n < 0 || *d <= 0) throw ParseError(lineno, "expected header 'vocab_size dim'");
    vocab_size = static_cast<std::size_t>(*n);
    dim = static_cast<std::size_t>(*d);
  }

  auto vocab = std::make_shared<Vocabulary>();
  Matrix vectors(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(vocab_size));
  std::size_t count = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto body = text::trim(line);
    if (body.empty()) continue;
    if (count == vocab_size) throw ParseError(lineno, "more vectors than the header's vocab_size " + std::to_string(vocab_size));

    std::vector<std::string_view> fields;
    for (auto f : text::split(body, ' '))
      if (!f.empty()) fields.push_back(f);
    if (fields.size() != dim + 1)
      throw ParseError(lineno, "dimension mismatch: expected " + std::to_string(dim) + " values, got " +
                                   std::to_string(fields.size() - 1));
    for (std::size_t k = 0; k < dim; ++k) {
      const auto v = text::parse_double(fields[k + 1]);
      if (!v) throw ParseError(lineno, "non-numeric embedding value '" + std::string(fields[k + 1]) + "'");
      if (!std::isfinite(*v)) throw ParseError(lineno, "non-finite embedding");
      vectors(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(count)) = *v;
    }
    if (!vocab->add(std::string(fields[0]))) throw ParseError(lineno, "duplicate word '" + std::string(fields[0]) + "'");
    ++count;
  }
  if (count != vocab_size)
    throw DataError("header announced " + std::to_string(vocab_size) + " vectors, found " + std::to_string(count));
  return EmbeddingTable(std::move(vocab), std::move(vectors), true);
}

/// Shortest round-trip formatting: loading the output reproduces every
/// value bit for bit.
inline void save_word_vectors(std::ostream& out, const EmbeddingTable& table) {
  out << table.size() << ' ' << table.dim() << '\n';
  const auto& vecs = table.vectors();
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.vocab().word(static_cast<int>(i));
    for (Eigen::Index k = 0; k < vecs.rows(); ++k) out << ' ' << text::format_double(vecs(k, static_cast<Eigen::Index>(i)));
    out << '\n';
  }
}

/// Gaussian-initialized table over the given words, for runs without
/// pretrained vectors.
inline EmbeddingTable random_word_vectors(std::vector<std::string> words, std::size_t dim, std::uint64_t seed,
                                          double stddev = 0.1) {
  auto vocab = std::make_shared<Vocabulary>(std::move(words));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, stddev);
  Matrix m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(vocab->size()));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = gauss(rng);
  return EmbeddingTable(std::move(vocab), std::move(m), true);
}

/// Ids of the in-vocabulary tokens of a phrase, in token order.
inline std::vector<int> token_ids(const EmbeddingTable& table, const Phrase& phrase) {
  std::vector<int> ids;
  ids.reserve(phrase.size());
  for (const auto& w : phrase.words()) {
    const int id = table.find(w);
    if (id >= 0) ids.push_back(id);
  }
  return ids;
}

/// Elementwise sum of the in-vocabulary token vectors; OOV tokens are
/// skipped and an all-OOV phrase yields zeros with in_vocab == 0.
inline ComposedVector phrase_sum(const EmbeddingTable& table, const Phrase& phrase) {
  ComposedVector out{Vector::Zero(static_cast<Eigen::Index>(table.dim())), 0};
  for (const auto& w : phrase.words()) {
    const int id = table.find(w);
    if (id < 0) continue;
    out.vec += table.vectors().col(id);
    ++out.in_vocab;
  }
  return out;
}

/// phrase_sum divided by the in-vocabulary token count.
inline ComposedVector phrase_average(const EmbeddingTable& table, const Phrase& phrase) {
  ComposedVector out = phrase_sum(table, phrase);
  if (out.in_vocab > 0) out.vec /= static_cast<double>(out.in_vocab);
  return out;
}

// ----------------------------------------------------- Relation vectors

struct RelationEmbeddings {
  RelationSchema schema;
  Matrix vectors;  // dim x |schema|

  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors.rows()); }
};

/// N(0, 0.05^2) entries, deterministic in the seed.
inline RelationEmbeddings init_relation_embeddings(const RelationSchema& schema, std::size_t dim, std::uint64_t seed,
                                                   double stddev = 0.05) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, stddev);
  RelationEmbeddings out{schema, Matrix(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(schema.size()))};
  for (Eigen::Index j = 0; j < out.vectors.cols(); ++j)
    for (Eigen::Index i = 0; i < out.vectors.rows(); ++i) out.vectors(i, j) = gauss(rng);
  return out;
}

}  // namespace kbnovelty
