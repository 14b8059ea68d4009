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

/** @file checkpoint.hpp --- versioned text container for trained models.
 *
 * Layout (version 1), one item per line:
 *
 *     kbnovelty-checkpoint 1
 *     kind <factorized|prototypical|dnn|bilinear>
 *     d1 <int>
 *     d2 <int>
 *     phi <relu|tanh>
 *     dnn_relation <add|none>
 *     terms <0|1> <0|1> <0|1>
 *     threshold <double|none>
 *     epoch <int>
 *     vocab <V>
 *     <V lines, one word each>
 *     relations <R>
 *     <R lines, one relation each>
 *     tensor <name> <rows> <cols>     (repeated, in for_each_tensor order)
 *     <rows lines of cols space-separated values>
 *     end
 *
 * Values are written in shortest round-trip form, so save/load is exact.
 */

#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "kbnovelty/error.hpp"
#include "kbnovelty/scorers.hpp"
#include "kbnovelty/text.hpp"

namespace kbnovelty {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ScorerParams params;
  std::optional<double> threshold;  // dev-selected probability cutoff
  std::size_t epoch = 0;
};

inline void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const ScorerParams& p = ckpt.params;
  const auto& c = p.config;
  out << "kbnovelty-checkpoint " << kCheckpointVersion << '\n'
      << "kind " << to_string(c.kind) << '\n'
      << "d1 " << p.d1() << '\n'
      << "d2 " << c.d2 << '\n'
      << "phi " << to_string(c.phi) << '\n'
      << "dnn_relation " << to_string(c.dnn_relation) << '\n'
      << "terms " << c.terms[0] << ' ' << c.terms[1] << ' ' << c.terms[2] << '\n'
      << "threshold " << (ckpt.threshold ? text::format_double(*ckpt.threshold) : "none") << '\n'
      << "epoch " << ckpt.epoch << '\n'
      << "vocab " << p.vocab->size() << '\n';
  for (const auto& w : p.vocab->words()) out << w << '\n';
  out << "relations " << p.schema.size() << '\n';
  p.schema.write(out);
  for_each_tensor(
      [&out](const std::string& name, const auto& t) {
        out << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
          for (Eigen::Index j = 0; j < t.cols(); ++j) {
            if (j) out << ' ';
            out << text::format_double(t(i, j));
          }
          out << '\n';
        }
      },
      p);
  out << "end\n";
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  save_checkpoint(f, ckpt);
}

namespace detail {

class CheckpointReader {
 public:
  explicit CheckpointReader(std::istream& in) : in_(in) {}

  std::string line() {
    std::string s;
    if (!std::getline(in_, s)) throw ParseError(lineno_ + 1, "unexpected end of checkpoint");
    ++lineno_;
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
  }

  /// "key value..." line; returns the fields after the key.
  std::vector<std::string> keyed(const std::string& key) {
    const std::string s = line();
    std::vector<std::string> fields;
    for (auto f : text::split(s, ' '))
      if (!f.empty()) fields.emplace_back(f);
    if (fields.empty() || fields[0] != key) throw ParseError(lineno_, "expected '" + key + "'");
    fields.erase(fields.begin());
    return fields;
  }

  std::size_t count(const std::string& key) {
    const auto f = keyed(key);
    const auto v = f.size() == 1 ? text::parse_int(f[0]) : std::nullopt;
    if (!v || *v < 0) throw ParseError(lineno_, "bad value for '" + key + "'");
    return static_cast<std::size_t>(*v);
  }

  std::string word(const std::string& key) {
    const auto f = keyed(key);
    if (f.size() != 1) throw ParseError(lineno_, "bad value for '" + key + "'");
    return f[0];
  }

  std::size_t lineno() const noexcept { return lineno_; }

 private:
  std::istream& in_;
  std::size_t lineno_ = 0;
};

}  // namespace detail

inline Checkpoint load_checkpoint(std::istream& in) {
  detail::CheckpointReader r(in);
  const auto magic = r.keyed("kbnovelty-checkpoint");
  if (magic.size() != 1 || magic[0] != std::to_string(kCheckpointVersion))
    throw ParseError(r.lineno(), "unsupported checkpoint version");

  Checkpoint ckpt;
  ScorerParams& p = ckpt.params;
  try {
    p.config.kind = parse_model_kind(r.word("kind"));
    const std::size_t d1 = r.count("d1");
    p.config.d2 = r.count("d2");
    p.config.phi = parse_nonlinearity(r.word("phi"));
    p.config.dnn_relation = parse_dnn_relation(r.word("dnn_relation"));
    const auto terms = r.keyed("terms");
    if (terms.size() != 3) throw ParseError(r.lineno(), "terms needs 3 flags");
    for (int k = 0; k < 3; ++k) p.config.terms[static_cast<std::size_t>(k)] = terms[static_cast<std::size_t>(k)] == "1";
    const std::string thr = r.word("threshold");
    if (thr != "none") {
      const auto v = text::parse_double(thr);
      if (!v) throw ParseError(r.lineno(), "bad threshold");
      ckpt.threshold = *v;
    }
    ckpt.epoch = r.count("epoch");

    auto vocab = std::make_shared<Vocabulary>();
    const std::size_t nv = r.count("vocab");
    for (std::size_t i = 0; i < nv; ++i)
      if (!vocab->add(r.line())) throw ParseError(r.lineno(), "duplicate vocabulary word");
    p.vocab = vocab;
    std::vector<std::string> rels;
    const std::size_t nr = r.count("relations");
    for (std::size_t i = 0; i < nr; ++i) rels.push_back(r.line());
    p.schema = RelationSchema(rels);

    // Shape a skeleton, then read tensors in visiting order.
    const auto i1 = static_cast<Eigen::Index>(d1);
    const auto i2 = static_cast<Eigen::Index>(p.config.d2);
    p.words.resize(i1, static_cast<Eigen::Index>(nv));
    if (p.uses_relation_vectors()) p.relations.resize(i1, static_cast<Eigen::Index>(nr));
    switch (p.kind()) {
      case ModelKind::factorized:
      case ModelKind::prototypical:
        p.A.resize(i2, i1), p.B.resize(i2, i1), p.b1.resize(i2), p.b2.resize(i2), p.weights.resize(3);
        break;
      case ModelKind::dnn:
        p.A.resize(i2, i1), p.B.resize(i2, i1), p.b1.resize(i2), p.W.resize(i2), p.b2.resize(1);
        if (p.uses_relation_path()) p.C.resize(i2, i1);
        break;
      case ModelKind::bilinear:
        p.M.assign(nr, Matrix(i1, i1));
        break;
    }
    for_each_tensor(
        [&r](const std::string& name, auto& t) {
          const auto head = r.keyed("tensor");
          if (head.size() != 3 || head[0] != name) throw ParseError(r.lineno(), "expected tensor '" + name + "'");
          const auto rows = text::parse_int(head[1]);
          const auto cols = text::parse_int(head[2]);
          if (!rows || !cols || *rows != t.rows() || *cols != t.cols())
            throw ParseError(r.lineno(), "tensor '" + name + "' has unexpected shape");
          for (Eigen::Index i = 0; i < t.rows(); ++i) {
            const std::string row = r.line();
            std::vector<std::string_view> vals;
            for (auto f : text::split(row, ' '))
              if (!f.empty()) vals.push_back(f);
            if (static_cast<Eigen::Index>(vals.size()) != t.cols())
              throw ParseError(r.lineno(), "tensor '" + name + "' row has wrong length");
            for (Eigen::Index j = 0; j < t.cols(); ++j) {
              const auto v = text::parse_double(vals[static_cast<std::size_t>(j)]);
              if (!v || !std::isfinite(*v)) throw ParseError(r.lineno(), "bad value in tensor '" + name + "'");
              t(i, j) = *v;
            }
          }
        },
        p);
    if (r.line() != "end") throw ParseError(r.lineno(), "expected 'end'");
  } catch (const ParseError&) {
    throw;
  } catch (const DataError& e) {
    throw ParseError(r.lineno(), e.what());
  }
  validate(p);
  return ckpt;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  try {
    return load_checkpoint(f);
  } catch (const ParseError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace kbnovelty
