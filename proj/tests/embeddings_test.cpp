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

#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "kbnovelty/embeddings.hpp"

using namespace kbnovelty;

namespace {

EmbeddingTable ab_table() {
  std::istringstream in("2 2\na 1 0\nb 0 2\n");
  return load_word_vectors(in);
}

}  // namespace

TEST(LoadWordVectors, CountsEntries) {
  std::istringstream in("2 3\negg 0.1 0.2 0.3\nfood -1 0 1.5\n");
  const auto t = load_word_vectors(in);
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.dim(), 3u);
  EXPECT_TRUE(t.frozen());
  EXPECT_DOUBLE_EQ(t.vector("food")(2), 1.5);
  EXPECT_EQ(t.find("missing"), -1);
}

TEST(LoadWordVectors, ShortLineReportsLineNumber) {
  std::istringstream in("2 3\negg 0.1 0.2 0.3\nfood 1 2\n");
  try {
    load_word_vectors(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(LoadWordVectors, NonFiniteRejected) {
  std::istringstream in("1 2\negg nan 1\n");
  try {
    load_word_vectors(in);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite embedding"), std::string::npos);
  }
}

TEST(LoadWordVectors, OtherErrors) {
  std::istringstream dup("2 1\na 1\na 2\n");
  EXPECT_THROW(load_word_vectors(dup), DataError);
  std::istringstream count("3 1\na 1\nb 2\n");
  EXPECT_THROW(load_word_vectors(count), DataError);
  std::istringstream header("x y\n");
  EXPECT_THROW(load_word_vectors(header), DataError);
}

TEST(SaveWordVectors, ExactRoundTrip) {
  const auto t = random_word_vectors({"a", "b", "c"}, 5, 3);
  std::ostringstream out;
  save_word_vectors(out, t);
  std::istringstream in(out.str());
  const auto back = load_word_vectors(in);
  EXPECT_EQ(back.vocab().words(), t.vocab().words());
  EXPECT_EQ(back.vectors(), t.vectors());
}

TEST(EmbeddingTable, FrozenTableRefusesMutation) {
  auto t = ab_table();
  EXPECT_THROW(t.mutable_vectors(), Error);
  auto copy = t.trainable_copy();
  copy.mutable_vectors()(0, 0) = 5.0;
  EXPECT_DOUBLE_EQ(t.vectors()(0, 0), 1.0);
}

TEST(PhraseSum, SingleWordIsExact) {
  const auto t = ab_table();
  const auto v = phrase_sum(t, Phrase({"b"}));
  EXPECT_EQ(v.vec, t.vectors().col(1));
  EXPECT_EQ(v.in_vocab, 1u);
}

TEST(PhraseSum, HandSum) {
  const auto v = phrase_sum(ab_table(), Phrase({"a", "b"}));
  EXPECT_DOUBLE_EQ(v.vec(0), 1.0);
  EXPECT_DOUBLE_EQ(v.vec(1), 2.0);
}

TEST(PhraseSum, AllOovIsZeroAndFlagged) {
  const auto v = phrase_sum(ab_table(), Phrase({"x", "y"}));
  EXPECT_TRUE(v.oov());
  EXPECT_EQ(v.vec, Vector::Zero(2));
}

TEST(PhraseSum, OovTokensAreSkipped) {
  const auto v = phrase_sum(ab_table(), Phrase({"a", "zzz"}));
  EXPECT_EQ(v.in_vocab, 1u);
  EXPECT_DOUBLE_EQ(v.vec(0), 1.0);
}

TEST(PhraseAverage, HandAverage) {
  const auto t = ab_table();
  const auto single = phrase_average(t, Phrase({"a"}));
  EXPECT_EQ(single.vec, t.vectors().col(0));
  const auto v = phrase_average(t, Phrase({"a", "b"}));
  EXPECT_DOUBLE_EQ(v.vec(0), 0.5);
  EXPECT_DOUBLE_EQ(v.vec(1), 1.0);
  const auto oov_mixed = phrase_average(t, Phrase({"a", "qq", "b"}));
  EXPECT_DOUBLE_EQ(oov_mixed.vec(1), 1.0);  // averages over in-vocabulary tokens
}

TEST(RelationEmbeddings, DeterministicAndSized) {
  const auto schema = RelationSchema::conceptnet();
  const auto a = init_relation_embeddings(schema, 10, 4);
  const auto b = init_relation_embeddings(schema, 10, 4);
  EXPECT_EQ(a.vectors.cols(), 34);
  EXPECT_EQ(a.dim(), 10u);
  EXPECT_EQ(a.vectors, b.vectors);
  EXPECT_NE(a.vectors, init_relation_embeddings(schema, 10, 5).vectors);
}

TEST(TokenIds, SkipsUnknownWords) {
  const auto ids = token_ids(ab_table(), Phrase({"b", "q", "a"}));
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(ids[0], 1);
  EXPECT_EQ(ids[1], 0);
}
