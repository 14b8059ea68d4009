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

/** @file corpus.hpp --- triples, TSV ingestion, dataset splits and
 *  swap-negative sampling.
 *
 * Triple TSV lines look like
 *
 *     relation<TAB>head text<TAB>tail text[<TAB>confidence]
 *
 * Lines starting with '#' and blank lines are ignored. Head and tail text
 * is normalized on the way in (see normalize_phrase), so writing a parsed
 * file back produces a canonical form that is stable under a second
 * parse/write cycle.
 *
 * Labeled TSV (the split files) carries an explicit label column:
 *
 *     relation<TAB>head<TAB>tail<TAB>label<TAB>confidence
 *
 * with label in {1, 0} and an empty confidence for negatives.
 */

#pragma once

#include <algorithm>
#include <cctype>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kbnovelty/error.hpp"
#include "kbnovelty/text.hpp"

namespace kbnovelty {

// ---------------------------------------------------------------- Phrase

/// Lowercased, whitespace-tokenized word sequence. Never empty.
class Phrase {
 public:
  Phrase() = default;

  /// Takes already-normalized tokens; use normalize_phrase for raw text.
  explicit Phrase(std::vector<std::string> words) : words_(std::move(words)) {}

  const std::vector<std::string>& words() const noexcept { return words_; }
  std::size_t size() const noexcept { return words_.size(); }
  bool empty() const noexcept { return words_.empty(); }

  std::string str() const {
    std::string out;
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (i) out += ' ';
      out += words_[i];
    }
    return out;
  }

  friend auto operator<=>(const Phrase&, const Phrase&) = default;
  friend bool operator==(const Phrase&, const Phrase&) = default;

 private:
  std::vector<std::string> words_;
};

namespace detail {

inline bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 128 && std::ispunct(u);
}

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace detail

/// Lowercase ASCII letters, split on whitespace, and strip leading and
/// trailing ASCII punctuation from every token; tokens that end up empty
/// are dropped. Bytes >= 0x80 pass through untouched, so UTF-8 survives.
inline Phrase normalize_phrase(std::string_view raw) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && detail::is_ascii_space(raw[i])) ++i;
    std::size_t j = i;
    while (j < raw.size() && !detail::is_ascii_space(raw[j])) ++j;
    if (j > i) {
      std::string_view tok = raw.substr(i, j - i);
      while (!tok.empty() && detail::is_ascii_punct(tok.front())) tok.remove_prefix(1);
      while (!tok.empty() && detail::is_ascii_punct(tok.back())) tok.remove_suffix(1);
      if (!tok.empty()) {
        std::string w(tok);
        for (char& c : w) {
          const auto u = static_cast<unsigned char>(c);
          if (u < 128) c = static_cast<char>(std::tolower(u));
        }
        words.push_back(std::move(w));
      }
    }
    i = j;
  }
  if (words.empty()) throw DataError("empty phrase after normalization");
  return Phrase(std::move(words));
}

// ---------------------------------------------------------------- Triple

struct Triple {
  std::string relation;
  Phrase head;
  Phrase tail;

  friend auto operator<=>(const Triple&, const Triple&) = default;
  friend bool operator==(const Triple&, const Triple&) = default;
};

/// (head, Relation, tail), the way neighbour lists are usually shown.
inline std::string to_display(const Triple& t) {
  return "(" + t.head.str() + ", " + t.relation + ", " + t.tail.str() + ")";
}

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    std::size_t h = std::hash<std::string>{}(t.relation);
    auto mix = [&h](const std::string& s) {
      h ^= std::hash<std::string>{}(s) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    };
    for (const auto& w : t.head.words()) mix(w);
    mix("\t");
    for (const auto& w : t.tail.words()) mix(w);
    return h;
  }
};

using TripleSet = std::unordered_set<Triple, TripleHash>;

enum class Label { negative = 0, positive = 1 };

struct LabeledTriple {
  Triple triple;
  Label label = Label::positive;
  std::optional<double> confidence;  // only ever set on positives

  bool positive() const noexcept { return label == Label::positive; }
  friend bool operator==(const LabeledTriple&, const LabeledTriple&) = default;
};

// -------------------------------------------------------- RelationSchema

/// Fixed relation vocabulary; ids are positions in load order.
class RelationSchema {
 public:
  RelationSchema() = default;

  explicit RelationSchema(std::vector<std::string> names) {
    for (auto& n : names) add(std::move(n));
  }

  /// The 34 relations of the commonsense ConceptNet subset used for KBC.
  static RelationSchema conceptnet() {
    return RelationSchema({"AtLocation",       "CapableOf",        "Causes",
                           "CausesDesire",     "CreatedBy",        "DefinedAs",
                           "DesireOf",         "Desires",          "HasA",
                           "HasFirstSubevent", "HasLastSubevent",  "HasPainCharacter",
                           "HasPainIntensity", "HasPrerequisite",  "HasProperty",
                           "HasSubevent",      "InheritsFrom",     "InstanceOf",
                           "IsA",              "LocatedNear",      "LocationOfAction",
                           "MadeOf",           "MotivatedByGoal",  "NotCapableOf",
                           "NotDesires",       "NotHasA",          "NotHasProperty",
                           "NotIsA",           "NotMadeOf",        "PartOf",
                           "ReceivesAction",   "RelatedTo",        "SymbolOf",
                           "UsedFor"});
  }

  /// One identifier per line; blank and '#' lines skipped.
  static RelationSchema read(std::istream& in) {
    RelationSchema schema;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto name = text::trim(line);
      if (name.empty() || name.front() == '#') continue;
      if (schema.contains(name)) throw ParseError(lineno, "duplicate relation '" + std::string(name) + "'");
      schema.add(std::string(name));
    }
    if (schema.size() == 0) throw DataError("relation schema is empty");
    return schema;
  }

  /// Sorted set of relations occurring in the given triples.
  static RelationSchema from_triples(std::span<const LabeledTriple> triples) {
    std::set<std::string> names;
    for (const auto& t : triples) names.insert(t.triple.relation);
    return RelationSchema(std::vector<std::string>(names.begin(), names.end()));
  }

  void write(std::ostream& out) const {
    for (const auto& n : names_) out << n << '\n';
  }

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& name(std::size_t id) const { return names_.at(id); }

  bool contains(std::string_view name) const { return ids_.count(std::string(name)) != 0; }

  std::optional<std::size_t> find(std::string_view name) const {
    const auto it = ids_.find(std::string(name));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t id(std::string_view name) const {
    const auto found = find(name);
    if (!found) throw DataError("relation '" + std::string(name) + "' is not in the schema");
    return *found;
  }

  friend bool operator==(const RelationSchema& a, const RelationSchema& b) { return a.names_ == b.names_; }

 private:
  void add(std::string name) {
    ids_.emplace(name, names_.size());
    names_.push_back(std::move(name));
  }

  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// ------------------------------------------------------------ TSV input

namespace detail {

/// Relation, head and tail from the first three fields of a TSV record.
inline Triple parse_triple_fields(std::span<const std::string_view> fields, std::size_t line,
                                  const RelationSchema* schema) {
  Triple t;
  t.relation = std::string(text::trim(fields[0]));
  if (t.relation.empty()) throw ParseError(line, "empty relation");
  if (schema && !schema->contains(t.relation)) throw ParseError(line, "unknown relation '" + t.relation + "'");
  auto phrase = [line](std::string_view raw, const char* which) {
    try {
      return normalize_phrase(raw);
    } catch (const DataError&) {
      throw ParseError(line, std::string("empty ") + which + " phrase");
    }
  };
  t.head = phrase(fields[1], "head");
  t.tail = phrase(fields[2], "tail");
  return t;
}

}  // namespace detail

/// Pull-style reader over a triple TSV stream. Memory use is independent
/// of the stream length, which the candidate reranker relies on.
class TripleReader {
 public:
  struct Options {
    bool require_confidence = false;
    const RelationSchema* schema = nullptr;  // validate relations when set
  };

  explicit TripleReader(std::istream& in) : TripleReader(in, Options{}) {}
  TripleReader(std::istream& in, Options opts) : in_(in), opts_(opts) {}

  /// Next record, or std::nullopt at end of stream. Throws ParseError.
  std::optional<LabeledTriple> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (text::trim(line).empty() || line.front() == '#') continue;
      return parse_line(line);
    }
    return std::nullopt;
  }

  /// Line number of the record most recently returned by next().
  std::size_t line() const noexcept { return line_; }

 private:
  LabeledTriple parse_line(std::string_view line) const {
    const auto fields = text::split(line, '\t');
    if (fields.size() != 3 && fields.size() != 4)
      throw ParseError(line_, "expected 3 or 4 tab-separated fields, got " + std::to_string(fields.size()));
    if (opts_.require_confidence && fields.size() != 4) throw ParseError(line_, "missing confidence field");

    LabeledTriple out;
    out.triple = detail::parse_triple_fields(fields, line_, opts_.schema);
    if (fields.size() == 4) {
      const auto conf = text::parse_double(fields[3]);
      if (!conf || !std::isfinite(*conf)) throw ParseError(line_, "non-numeric confidence '" + std::string(fields[3]) + "'");
      if (*conf < 0.0) throw ParseError(line_, "negative confidence");
      out.confidence = *conf;
    }
    return out;
  }

  std::istream& in_;
  Options opts_;
  std::size_t line_ = 0;
};

/// Reads a whole triple TSV; all records are labeled positive.
inline std::vector<LabeledTriple> parse_triple_file(std::istream& in, bool has_confidence,
                                                    const RelationSchema* schema = nullptr) {
  TripleReader reader(in, {has_confidence, schema});
  std::vector<LabeledTriple> out;
  while (auto t = reader.next()) out.push_back(std::move(*t));
  return out;
}

inline void write_triple_line(std::ostream& out, const Triple& t) {
  out << t.relation << '\t' << t.head.str() << '\t' << t.tail.str();
}

inline void write_triple_file(std::ostream& out, std::span<const LabeledTriple> triples) {
  for (const auto& t : triples) {
    write_triple_line(out, t.triple);
    if (t.confidence) out << '\t' << text::format_double(*t.confidence);
    out << '\n';
  }
}

inline std::vector<LabeledTriple> parse_labeled_file(std::istream& in, const RelationSchema* schema = nullptr) {
  std::vector<LabeledTriple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty() || line.front() == '#') continue;
    const auto fields = text::split(line, '\t');
    if (fields.size() != 5) throw ParseError(lineno, "expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    LabeledTriple t;
    t.triple = detail::parse_triple_fields(fields, lineno, schema);
    const auto label = text::trim(fields[3]);
    if (label == "1") {
      t.label = Label::positive;
    } else if (label == "0") {
      t.label = Label::negative;
    } else {
      throw ParseError(lineno, "label must be 0 or 1, got '" + std::string(label) + "'");
    }
    if (!text::trim(fields[4]).empty()) {
      if (t.label == Label::negative) throw ParseError(lineno, "negative triple carries a confidence");
      const auto conf = text::parse_double(fields[4]);
      if (!conf || !std::isfinite(*conf) || *conf < 0.0) throw ParseError(lineno, "non-numeric confidence '" + std::string(fields[4]) + "'");
      t.confidence = *conf;
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline void write_labeled_file(std::ostream& out, std::span<const LabeledTriple> triples) {
  for (const auto& t : triples) {
    write_triple_line(out, t.triple);
    out << '\t' << (t.positive() ? '1' : '0') << '\t';
    if (t.confidence) out << text::format_double(*t.confidence);
    out << '\n';
  }
}

// --------------------------------------------------------------- Splits

enum class SplitRule { confidence, random };

inline std::string to_string(SplitRule r) { return r == SplitRule::confidence ? "confidence" : "random"; }

inline SplitRule parse_split_rule(std::string_view s) {
  if (s == "confidence") return SplitRule::confidence;
  if (s == "random") return SplitRule::random;
  throw DataError("unknown split rule '" + std::string(s) + "' (expected confidence or random)");
}

struct SplitSizes {
  std::size_t dev = 0;
  std::size_t test = 0;
};

struct DatasetSplit {
  std::vector<LabeledTriple> train;
  std::vector<LabeledTriple> dev;
  std::vector<LabeledTriple> test;
  SplitRule rule = SplitRule::random;
  std::uint64_t seed = 0;
  SplitSizes sizes;
  std::size_t neg_ratio = 0;  // eval negatives per positive, 0 when none attached
};

/// Partition positives into train/dev/test.
///
/// Duplicate triples are collapsed first (first occurrence wins) so the
/// three parts are disjoint as exact triples. The confidence rule puts
/// the highest-confidence triples in test and the next ones in dev, with
/// ties ordered by the triple itself. The random rule shuffles with the
/// seed, then slices test, dev, train in that order.
inline DatasetSplit make_split(std::span<const LabeledTriple> positives, SplitRule rule, SplitSizes sizes,
                               std::uint64_t seed) {
  std::vector<LabeledTriple> unique;
  unique.reserve(positives.size());
  {
    TripleSet seen;
    for (const auto& p : positives) {
      if (!p.positive()) throw DataError("make_split expects positive triples only");
      if (seen.insert(p.triple).second) unique.push_back(p);
    }
  }
  if (sizes.dev + sizes.test > unique.size())
    throw DataError("split sizes (dev " + std::to_string(sizes.dev) + ", test " + std::to_string(sizes.test) +
                    ") exceed the " + std::to_string(unique.size()) + " distinct positives");

  if (rule == SplitRule::confidence) {
    for (const auto& p : unique)
      if (!p.confidence) throw DataError("confidence split requires a confidence on every triple");
    std::stable_sort(unique.begin(), unique.end(), [](const LabeledTriple& a, const LabeledTriple& b) {
      if (*a.confidence != *b.confidence) return *a.confidence > *b.confidence;
      return a.triple < b.triple;
    });
  } else {
    std::mt19937_64 rng(seed);
    std::shuffle(unique.begin(), unique.end(), rng);
  }

  DatasetSplit split;
  split.rule = rule;
  split.seed = seed;
  split.sizes = sizes;
  const auto test_end = unique.begin() + static_cast<std::ptrdiff_t>(sizes.test);
  const auto dev_end = test_end + static_cast<std::ptrdiff_t>(sizes.dev);
  split.test.assign(unique.begin(), test_end);
  split.dev.assign(test_end, dev_end);
  split.train.assign(dev_end, unique.end());
  return split;
}

// ------------------------------------------------------------ Negatives

struct NegativeSample {
  std::vector<LabeledTriple> negatives;
  std::vector<std::size_t> sources;  // index of the corrupted positive, per negative
  std::size_t skipped = 0;           // corruptions abandoned after max retries
};

struct NegativeOptions {
  std::size_t ratio = 1;
  std::size_t max_retries = 20;
};

/// Corruption pools and the known-positive set, built once per reference
/// set so that per-epoch resampling does not rebuild them.
class NegativeSampler {
 public:
  explicit NegativeSampler(std::span<const LabeledTriple> reference) {
    std::set<Phrase> heads, tails;
    std::set<std::string> rels;
    for (const auto& t : reference) {
      heads.insert(t.triple.head);
      tails.insert(t.triple.tail);
      rels.insert(t.triple.relation);
      if (t.positive()) known_.insert(t.triple);
    }
    heads_.assign(heads.begin(), heads.end());
    tails_.assign(tails.begin(), tails.end());
    relations_.assign(rels.begin(), rels.end());
    if (heads_.size() < 2) throw DataError("head pool has fewer than 2 distinct values");
    if (tails_.size() < 2) throw DataError("tail pool has fewer than 2 distinct values");
    if (relations_.size() < 2) throw DataError("relation pool has fewer than 2 distinct values");
  }

  /// For every positive, `ratio` corruptions of exactly one component. A
  /// corruption equal to a known positive is redrawn, up to max_retries
  /// times, then skipped and counted.
  NegativeSample sample(std::span<const LabeledTriple> positives, NegativeOptions opts, std::uint64_t seed) const {
    if (opts.ratio < 1) throw DataError("negative ratio must be at least 1");
    std::mt19937_64 rng(seed);
    NegativeSample out;
    out.negatives.reserve(positives.size() * opts.ratio);
    out.sources.reserve(positives.size() * opts.ratio);
    for (std::size_t i = 0; i < positives.size(); ++i) {
      for (std::size_t k = 0; k < opts.ratio; ++k) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt <= opts.max_retries; ++attempt) {
          Triple neg = corrupt(positives[i].triple, rng);
          if (known_.count(neg)) continue;
          out.negatives.push_back({std::move(neg), Label::negative, std::nullopt});
          out.sources.push_back(i);
          placed = true;
          break;
        }
        if (!placed) ++out.skipped;
      }
    }
    return out;
  }

  const TripleSet& known_positives() const noexcept { return known_; }

 private:
  template <class T>
  static const T& draw_other(const std::vector<T>& pool, const T& original, std::mt19937_64& rng) {
    // Pools are sorted and distinct; pick uniformly among the others.
    const auto it = std::lower_bound(pool.begin(), pool.end(), original);
    const bool present = it != pool.end() && *it == original;
    const std::size_t n = present ? pool.size() - 1 : pool.size();
    std::size_t j = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    if (present && j >= static_cast<std::size_t>(it - pool.begin())) ++j;
    return pool[j];
  }

  Triple corrupt(const Triple& src, std::mt19937_64& rng) const {
    Triple t = src;
    switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
      case 0:
        t.head = draw_other(heads_, src.head, rng);
        break;
      case 1:
        t.relation = draw_other(relations_, src.relation, rng);
        break;
      default:
        t.tail = draw_other(tails_, src.tail, rng);
        break;
    }
    return t;
  }

  std::vector<Phrase> heads_;
  std::vector<Phrase> tails_;
  std::vector<std::string> relations_;
  TripleSet known_;
};

inline NegativeSample sample_negatives(std::span<const LabeledTriple> positives,
                                       std::span<const LabeledTriple> reference, std::size_t ratio,
                                       std::uint64_t seed) {
  return NegativeSampler(reference).sample(positives, {ratio, 20}, seed);
}

/// Appends frozen swap negatives to dev and test. Pools and the
/// known-positive set come from every positive in the split.
inline NegativeSample attach_eval_negatives(DatasetSplit& split, std::size_t ratio, std::uint64_t seed) {
  std::vector<LabeledTriple> all;
  all.reserve(split.train.size() + split.dev.size() + split.test.size());
  for (auto* part : {&split.train, &split.dev, &split.test})
    for (const auto& t : *part)
      if (t.positive()) all.push_back(t);
  const NegativeSampler sampler(all);

  NegativeSample total;
  std::uint64_t salt = 1;
  for (auto* part : {&split.dev, &split.test}) {
    std::vector<LabeledTriple> pos;
    for (const auto& t : *part)
      if (t.positive()) pos.push_back(t);
    auto neg = sampler.sample(pos, {ratio, 20}, seed ^ (0x9e3779b97f4a7c15ULL * salt++));
    total.skipped += neg.skipped;
    part->insert(part->end(), neg.negatives.begin(), neg.negatives.end());
  }
  split.neg_ratio = ratio;
  return total;
}

// -------------------------------------------------------- Split on disk

/// Writes train.tsv, dev.tsv, test.tsv (labeled TSV) and manifest.txt.
inline void write_split(const std::filesystem::path& dir, const DatasetSplit& split) {
  std::filesystem::create_directories(dir);
  auto dump = [&dir](const char* name, const std::vector<LabeledTriple>& part) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw DataError("cannot write " + (dir / name).string());
    write_labeled_file(f, part);
  };
  dump("train.tsv", split.train);
  dump("dev.tsv", split.dev);
  dump("test.tsv", split.test);

  std::ofstream m(dir / "manifest.txt", std::ios::binary);
  if (!m) throw DataError("cannot write " + (dir / "manifest.txt").string());
  m << "format=kbnovelty-split\n"
    << "version=1\n"
    << "rule=" << to_string(split.rule) << '\n'
    << "seed=" << split.seed << '\n'
    << "dev_size=" << split.sizes.dev << '\n'
    << "test_size=" << split.sizes.test << '\n'
    << "neg_ratio=" << split.neg_ratio << '\n'
    << "train_count=" << split.train.size() << '\n'
    << "dev_count=" << split.dev.size() << '\n'
    << "test_count=" << split.test.size() << '\n';
}

inline std::map<std::string, std::string> read_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError(lineno, "expected key=value");
    kv[std::string(text::trim(t.substr(0, eq)))] = std::string(text::trim(t.substr(eq + 1)));
  }
  return kv;
}

inline DatasetSplit read_split(const std::filesystem::path& dir, const RelationSchema* schema = nullptr) {
  auto load = [&](const char* name) {
    std::ifstream f(dir / name, std::ios::binary);
    if (!f) throw DataError("cannot open " + (dir / name).string());
    try {
      return parse_labeled_file(f, schema);
    } catch (const ParseError& e) {
      throw DataError((dir / name).string() + ": " + e.what());
    }
  };
  DatasetSplit split;
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw DataError("cannot open " + (dir / "manifest.txt").string());
  const auto kv = read_key_values(m);
  auto get = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError("manifest is missing '" + std::string(key) + "'");
    return it->second;
  };
  if (get("format") != "kbnovelty-split") throw DataError("not a kbnovelty split manifest");
  split.rule = parse_split_rule(get("rule"));
  split.seed = std::stoull(get("seed"));
  split.sizes.dev = std::stoull(get("dev_size"));
  split.sizes.test = std::stoull(get("test_size"));
  split.neg_ratio = std::stoull(get("neg_ratio"));
  split.train = load("train.tsv");
  split.dev = load("dev.tsv");
  split.test = load("test.tsv");
  return split;
}

}  // namespace kbnovelty
