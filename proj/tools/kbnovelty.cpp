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

// kbnovelty command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kbnovelty/kbnovelty.hpp"

namespace fs = std::filesystem;
using namespace kbnovelty;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

// ------------------------------------------------------------ helpers

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  return f;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

/// "conceptnet", "infer" (nullopt) or a file with one relation per line.
std::optional<RelationSchema> load_schema(const std::string& spec) {
  if (spec == "conceptnet") return RelationSchema::conceptnet();
  if (spec == "infer") return std::nullopt;
  auto f = open_in(spec);
  return RelationSchema::read(f);
}

EmbeddingTable load_vectors(const std::string& path) {
  auto f = open_in(path);
  try {
    return load_word_vectors(f);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

/// Novelty vectors: --vectors, else vectors.txt next to the checkpoint.
EmbeddingTable novelty_vectors(const std::string& vectors, const std::string& checkpoint) {
  if (!vectors.empty()) return load_vectors(vectors);
  if (!checkpoint.empty()) {
    const auto beside = fs::path(checkpoint).parent_path() / "vectors.txt";
    if (fs::exists(beside)) return load_vectors(beside.string());
  }
  throw DataError("--vectors is required (no vectors.txt beside the checkpoint)");
}

/// Training positives from --train FILE or --split DIR.
std::vector<LabeledTriple> training_positives(const std::string& train, const std::string& split) {
  std::vector<LabeledTriple> items;
  if (!train.empty()) {
    auto f = open_in(train);
    items = parse_triple_file(f, false);
  } else if (!split.empty()) {
    auto f = open_in((fs::path(split) / "train.tsv").string());
    items = parse_labeled_file(f);
  } else {
    throw DataError("either --train or --split is required");
  }
  std::erase_if(items, [](const LabeledTriple& t) { return !t.positive(); });
  if (items.empty()) throw DataError("no training positives");
  return items;
}

NoveltyIndex make_index(EmbeddingTable table, const std::vector<LabeledTriple>& train, std::size_t threads) {
  NoveltyIndex index(std::move(table), std::span<const LabeledTriple>(train), threads);
  if (index.excluded() > 0)
    std::cerr << "note: " << index.excluded() << " training triples have no in-vocabulary head or tail and are "
              << "excluded from the novelty index\n";
  if (index.empty()) throw DataError("novelty index is empty");
  return index;
}

/// Preset name, "computed" (from `distances`), or "Q33,Q66".
BucketThresholds resolve_thresholds(const std::string& spec, const std::function<std::vector<double>()>& distances) {
  if (spec == "computed") return compute_quantile_thresholds(distances());
  const auto comma = spec.find(',');
  if (comma != std::string::npos) {
    const auto a = text::parse_double(spec.substr(0, comma));
    const auto b = text::parse_double(spec.substr(comma + 1));
    if (!a || !b) throw DataError("bad --thresholds value '" + spec + "'");
    return BucketThresholds::manual(*a, *b);
  }
  return BucketThresholds::preset(spec);
}

std::string describe(const BucketThresholds& t) {
  return "q33=" + text::format_double(t.q33) + " q66=" + text::format_double(t.q66) + " source=" + to_string(t.source);
}

/// A query triple; fields separated by tabs or by a literal "\t".
Triple parse_query(const std::string& raw) {
  std::string s = raw;
  if (s.find('\t') == std::string::npos) {
    for (std::size_t pos; (pos = s.find("\\t")) != std::string::npos;) s.replace(pos, 2, "\t");
  }
  const auto fields = text::split(s, '\t');
  if (fields.size() != 3) throw DataError("query '" + raw + "' is not relation<TAB>head<TAB>tail");
  return detail::parse_triple_fields(fields, 1, nullptr);
}

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> out;
  for (auto f : text::split(s, ',')) {
    const auto v = text::parse_int(text::trim(f));
    if (!v || *v < 1) throw DataError("bad K value '" + std::string(f) + "'");
    out.push_back(static_cast<std::size_t>(*v));
  }
  return out;
}

// --------------------------------------------------- resolved configs

/// key=value for every long option of `cmd`, defaults included.
std::string resolved_config(const CLI::App& cmd) {
  std::ostringstream out;
  out << "# kbnovelty " << cmd.get_name() << '\n';
  for (const CLI::Option* opt : cmd.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names[0] == "help" || names[0] == "help-all" || names[0] == "config") continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      if (opt->get_multi_option_policy() == CLI::MultiOptionPolicy::TakeAll) {
        for (std::size_t i = 0; i < r.size(); ++i) value += (i ? "," : "") + r[i];
      } else if (!r.empty()) {
        value = r.back();
      }
      if (opt->get_type_size() == 0 && r.size() == 1 && r[0].empty()) value = "true";
    } else {
      value = opt->get_default_str();
      if (opt->get_type_size() == 0 && value.empty()) value = "false";
    }
    out << names[0] << '=' << value << '\n';
  }
  return out.str();
}

void write_config(const fs::path& path, const CLI::App& cmd) {
  auto f = open_out(path);
  f << resolved_config(cmd);
}

/// Writes `body` to `out` (a file) or stdout; the resolved config goes to
/// `<out>.config.txt`, or to stderr when printing to stdout.
void emit(const std::string& out, const std::string& body, const CLI::App& cmd) {
  if (out.empty()) {
    std::cout << body;
    std::cerr << resolved_config(cmd);
    return;
  }
  auto f = open_out(out);
  f << body;
  write_config(out + ".config.txt", cmd);
}

// ------------------------------------------------------- subcommands

struct Common {
  std::string schema = "conceptnet";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

void add_common(CLI::App* cmd, Common& c, bool with_schema) {
  cmd->add_option("--seed", c.seed, "Seed for every random choice");
  cmd->add_option("--threads", c.threads, "Worker threads for novelty scans")->check(CLI::PositiveNumber);
  if (with_schema)
    cmd->add_option("--schema", c.schema, "Relation schema: conceptnet, infer, or a file with one relation per line");
}

// split ---------------------------------------------------------------

struct SplitArgs {
  std::string input, out, rule = "confidence";
  std::size_t test = 0, dev = 0, neg_ratio = 1;
};

int run_split(const SplitArgs& a, const Common& c, const CLI::App& cmd) {
  const auto rule = parse_split_rule(a.rule);
  const auto schema = load_schema(c.schema);
  auto in = open_in(a.input);
  std::vector<LabeledTriple> kb;
  try {
    kb = parse_triple_file(in, rule == SplitRule::confidence, schema ? &*schema : nullptr);
  } catch (const ParseError& e) {
    throw DataError(a.input + ": " + e.what());
  }
  auto split = make_split(kb, rule, {a.dev, a.test}, c.seed);
  const auto negs = attach_eval_negatives(split, a.neg_ratio, c.seed);
  write_split(a.out, split);
  {
    auto f = open_out(fs::path(a.out) / "schema.txt");
    (schema ? *schema : RelationSchema::from_triples(kb)).write(f);
  }
  write_config(fs::path(a.out) / "config.txt", cmd);
  std::cerr << "split: train " << split.train.size() << ", dev " << split.dev.size() << ", test " << split.test.size()
            << " (" << negs.skipped << " negatives skipped)\n";
  return 0;
}

// train ---------------------------------------------------------------

struct TrainArgs {
  std::string split, out, model = "factorized", vectors, phi = "relu", dnn_relation = "add";
  std::size_t d1 = 200;
  TrainConfig cfg;
};

RelationSchema split_schema(const std::string& dir) {
  const auto path = fs::path(dir) / "schema.txt";
  if (fs::exists(path)) {
    auto f = open_in(path.string());
    return RelationSchema::read(f);
  }
  return RelationSchema::conceptnet();
}

int run_train(TrainArgs a, const Common& c, const CLI::App& cmd) {
  const RelationSchema schema = split_schema(a.split);
  const DatasetSplit split = read_split(a.split, &schema);
  a.cfg.seed = c.seed;
  a.cfg.phi = parse_nonlinearity(a.phi);
  a.cfg.dnn_relation = parse_dnn_relation(a.dnn_relation);
  const ModelKind kind = parse_model_kind(a.model);
  fs::create_directories(a.out);

  EmbeddingTable words;
  if (!a.vectors.empty()) {
    words = load_vectors(a.vectors);
  } else {
    if (a.d1 == 0) throw DataError("--d1 must be positive when --vectors is not given");
    std::set<std::string> vocab;
    for (const auto* part : {&split.train, &split.dev, &split.test})
      for (const auto& t : *part)
        for (const auto* p : {&t.triple.head, &t.triple.tail}) vocab.insert(p->words().begin(), p->words().end());
    words = random_word_vectors({vocab.begin(), vocab.end()}, a.d1, detail::mix_seed(c.seed, 99));
    auto f = open_out(fs::path(a.out) / "vectors.txt");
    save_word_vectors(f, words);
  }
  if (!a.vectors.empty()) fs::copy_file(a.vectors, fs::path(a.out) / "vectors.txt", fs::copy_options::overwrite_existing);
  write_config(fs::path(a.out) / "config.txt", cmd);

  auto history = open_out(fs::path(a.out) / "history.tsv");
  history << "epoch\ttrain_loss\tdev_f1\tthreshold\n";
  const auto result = train(kind, split, words, schema, a.cfg, [&](const EpochRecord& r) {
    history << r.epoch << '\t' << text::format_double(r.train_loss) << '\t' << text::format_double(r.dev_f1) << '\t'
            << text::format_double(r.threshold) << '\n';
    history.flush();
  });

  save_checkpoint(fs::path(a.out) / "checkpoint.txt", Checkpoint{result.params, result.threshold, result.best_epoch});
  auto report = open_out(fs::path(a.out) / "report.txt");
  report << "model=" << to_string(kind) << "\nbest_epoch=" << result.best_epoch
         << "\nbest_dev_f1=" << text::format_double(result.best_dev_f1)
         << "\nthreshold=" << text::format_double(result.threshold) << "\nepochs_run=" << result.history.size()
         << "\nunscorable_train=" << result.unscorable_train << "\nunscorable_dev=" << result.unscorable_dev
         << "\nskipped_negatives=" << result.skipped_negatives << "\ndiverged=" << (result.diverged ? 1 : 0) << '\n';
  if (!split.test.empty() && result.best_epoch > 0) {
    const auto r = evaluate_f1(result.params, result.threshold, split.test);
    report << "test_precision=" << text::format_double(r.precision) << "\ntest_recall=" << text::format_double(r.recall)
           << "\ntest_f1=" << text::format_double(r.f1) << "\ntest_count=" << r.count()
           << "\ntest_unscorable=" << r.unscorable << '\n';
    std::cerr << "train: best epoch " << result.best_epoch << ", dev F1 " << result.best_dev_f1 << ", test F1 " << r.f1
              << '\n';
  }
  if (result.diverged) {
    std::cerr << "error: training diverged: " << result.message << " (best checkpoint kept)\n";
    return kExitNumerical;
  }
  return 0;
}

// eval ----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, split, test, train, vectors, thresholds = "computed", out;
  std::optional<double> threshold;
};

std::string report_row(const std::string& name, const std::optional<EvalReport>& r) {
  std::ostringstream row;
  row << name << '\t';
  if (!r || r->count() == 0) {
    row << "0\tn/a\tn/a\tn/a\n";
  } else {
    row << r->count() << '\t' << text::format_fixed(r->precision, 3) << '\t' << text::format_fixed(r->recall, 3) << '\t'
        << text::format_fixed(r->f1, 3) << '\n';
  }
  return row.str();
}

int run_eval(const EvalArgs& a, const Common& c, const CLI::App& cmd) {
  const Checkpoint ckpt = load_checkpoint(fs::path(a.checkpoint));
  const ScorerParams& p = ckpt.params;
  std::vector<LabeledTriple> test;
  if (!a.test.empty()) {
    auto f = open_in(a.test);
    test = parse_labeled_file(f, &p.schema);
  } else if (!a.split.empty()) {
    auto f = open_in((fs::path(a.split) / "test.tsv").string());
    test = parse_labeled_file(f, &p.schema);
  } else {
    throw DataError("either --test or --split is required");
  }
  if (test.empty()) throw DataError("test set is empty");
  const double threshold = a.threshold ? *a.threshold : ckpt.threshold.value_or(0.5);

  const auto index = make_index(novelty_vectors(a.vectors, a.checkpoint), training_positives(a.train, a.split), c.threads);
  const auto scored = score_set(p, test);
  std::vector<std::optional<double>> dist(scored.probs.size());
  for (std::size_t i = 0; i < dist.size(); ++i)
    if (const auto rep = index.represent(test[scored.sources[i]].triple)) dist[i] = index.nearest(*rep).distance;
  const auto thresholds = resolve_thresholds(a.thresholds, [&] {
    std::vector<double> d;
    for (const auto& x : dist)
      if (x) d.push_back(*x);
    return d;
  });

  std::array<std::vector<double>, 3> probs;
  std::array<std::vector<int>, 3> labels;
  std::size_t no_distance = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (!dist[i]) {
      ++no_distance;
      continue;
    }
    const auto b = static_cast<std::size_t>(bucket_assign(*dist[i], thresholds));
    probs[b].push_back(scored.probs[i]);
    labels[b].push_back(scored.labels[i]);
  }

  std::ostringstream table;
  table << "# model=" << to_string(p.kind()) << " threshold=" << text::format_double(threshold) << ' '
        << describe(thresholds) << " unscorable=" << scored.unscorable << " no_distance=" << no_distance << '\n';
  table << "subset\tcount\tprecision\trecall\tf1\n";
  table << report_row("entire", f1_report(scored.probs, scored.labels, threshold));
  for (Bucket b : kBuckets) {
    const auto i = static_cast<std::size_t>(b);
    std::optional<EvalReport> r;
    if (!probs[i].empty()) r = f1_report(probs[i], labels[i], threshold);
    table << report_row(bucket_label(b), r);
  }
  std::cout << table.str();
  if (!a.out.empty()) {
    auto f = open_out(fs::path(a.out) / "eval.tsv");
    f << table.str();
    write_config(fs::path(a.out) / "config.txt", cmd);
  } else {
    std::cerr << resolved_config(cmd);
  }
  return 0;
}

// rerank --------------------------------------------------------------

struct RerankArgs {
  std::string checkpoint, candidates, split, train, vectors, thresholds = "paper_wikipedia", out;
  std::optional<std::size_t> top;
  bool buckets = false, dedup = false;
  std::size_t neighbors = 5;
  int scale_min = 1, scale_max = 5;
};

int run_rerank(const RerankArgs& a, const Common& c, const CLI::App& cmd) {
  if (a.buckets && !a.top) throw DataError("--buckets needs --top (the per-bucket list size)");
  const Checkpoint ckpt = load_checkpoint(fs::path(a.checkpoint));
  const auto index = make_index(novelty_vectors(a.vectors, a.checkpoint), training_positives(a.train, a.split), c.threads);
  const auto thresholds = resolve_thresholds(a.thresholds, [&] {
    auto f = open_in(a.candidates);
    return candidate_distances(f, index, &ckpt.params.schema);
  });

  RerankOptions opts;
  opts.top_n = a.top;
  if (a.buckets) opts.per_bucket = a.top;
  opts.dedup = a.dedup;
  opts.schema = &ckpt.params.schema;
  auto in = open_in(a.candidates);
  RerankResult result;
  try {
    result = rerank(in, ckpt.params, index, thresholds, opts);
  } catch (const ParseError& e) {
    throw DataError(a.candidates + ": " + e.what());
  }

  const fs::path out(a.out);
  {
    auto f = open_out(out / "ranked.tsv");
    write_ranked(f, result.ranked);
  }
  if (a.buckets) {
    for (Bucket b : kBuckets) {
      const auto& list = result.buckets[static_cast<std::size_t>(b)];
      if (list.size() < *a.top)
        std::cerr << "warning: bucket " << to_string(b) << " has only " << list.size() << " of " << *a.top
                  << " requested candidates\n";
      auto f = open_out(out / (to_string(b) + ".tsv"));
      write_ranked(f, list);
    }
    auto f = open_out(out / "annotation.tsv");
    export_annotation_sheet(f, result.buckets, index, a.neighbors, {a.scale_min, a.scale_max});
  }
  write_config(out / "config.txt", cmd);
  std::cerr << "rerank: read " << result.read << ", unscorable " << result.unscorable << ", duplicates "
            << result.duplicates << ", kept " << result.ranked.size() << "; " << describe(thresholds) << '\n';
  return 0;
}

// neighbors -----------------------------------------------------------

struct NeighborArgs {
  std::string split, train, vectors, queries, out;
  std::vector<std::string> query;
  std::size_t k = 5;
};

int run_neighbors(const NeighborArgs& a, const Common& c, const CLI::App& cmd) {
  std::vector<Triple> queries;
  for (const auto& q : a.query) queries.push_back(parse_query(q));
  if (!a.queries.empty()) {
    auto f = open_in(a.queries);
    for (const auto& t : read_ranked_triples(f)) queries.push_back(t);
  }
  if (queries.empty()) throw DataError("no queries (use --query or --queries)");
  const auto index = make_index(novelty_vectors(a.vectors, ""), training_positives(a.train, a.split), c.threads);
  std::ostringstream body;
  body << "query\trank\tneighbor\tdistance\n";
  for (const auto& q : queries) {
    const auto nn = index.k_nearest(q, a.k);
    for (std::size_t i = 0; i < nn.size(); ++i)
      body << to_display(q) << '\t' << (i + 1) << '\t' << to_display(index.triple(nn[i].index)) << '\t'
           << text::format_double(nn[i].distance) << '\n';
  }
  emit(a.out, body.str(), cmd);
  return 0;
}

// curve ---------------------------------------------------------------

struct CurveArgs {
  std::string ranked, split, train, vectors, out, ks;
};

int run_curve(const CurveArgs& a, const Common& c, const CLI::App& cmd) {
  auto f = open_in(a.ranked);
  const auto ranked = read_ranked_triples(f);
  if (ranked.empty()) throw DataError(a.ranked + ": no ranked triples");
  const auto index = make_index(novelty_vectors(a.vectors, ""), training_positives(a.train, a.split), c.threads);
  std::vector<std::size_t> ks;
  if (!a.ks.empty()) {
    ks = parse_ks(a.ks);
  } else {
    std::size_t scorable = 0;
    for (const auto& t : ranked) scorable += index.represent(t).has_value();
    // 1..10, then 20, 50, 100, 200, 500, ...
    for (std::size_t k = 1; k <= std::min<std::size_t>(10, scorable); ++k) ks.push_back(k);
    for (std::size_t base = 10; ks.size() >= 10; base *= 10) {
      if (2 * base <= scorable) ks.push_back(2 * base);
      if (5 * base <= scorable) ks.push_back(5 * base);
      if (10 * base > scorable) break;
      ks.push_back(10 * base);
    }
    if (ks.empty()) throw DataError("no scorable ranked triples");
    if (ks.back() != scorable) ks.push_back(scorable);
  }
  const auto curve = topk_mean_distance_curve(ranked, index, ks);
  if (curve.unscorable > 0) std::cerr << "curve: " << curve.unscorable << " unscorable items skipped\n";
  std::ostringstream body;
  write_curve(body, curve);
  emit(a.out, body.str(), cmd);
  return 0;
}

// agree ---------------------------------------------------------------

struct AgreeArgs {
  std::string first, second, out;
};

int run_agree(const AgreeArgs& a, const CLI::App& cmd) {
  auto fa = open_in(a.first);
  auto fb = open_in(a.second);
  std::map<SheetKey, int> sa, sb;
  try {
    sa = read_completed_sheet(fa);
  } catch (const ParseError& e) {
    throw DataError(a.first + ": " + e.what());
  }
  try {
    sb = read_completed_sheet(fb);
  } catch (const ParseError& e) {
    throw DataError(a.second + ": " + e.what());
  }
  const auto s = agreement_from_sheets(sa, sb);
  std::ostringstream body;
  body << "items\t" << s.items << "\npearson\t" << text::format_fixed(s.pearson, 4) << "\ncohen_kappa\t"
       << text::format_fixed(s.cohen_kappa, 4) << "\nmean_of_averages\t" << text::format_fixed(s.mean_of_averages, 4)
       << '\n';
  emit(a.out, body.str(), cmd);
  return 0;
}

// ---------------------------------------------------------- config

/// Moves `--config FILE` entries in front of the command-line flags so
/// that flags given explicitly take precedence (last value wins).
std::vector<std::string> expand_config(std::vector<std::string> args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    std::size_t span = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      span = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      span = 1;
    } else {
      continue;
    }
    auto f = open_in(path);
    const auto kv = read_key_values(f);
    std::vector<std::string> injected;
    for (const auto& [key, value] : kv) {
      if (value.empty() || value == "false") continue;  // unset options and flags
      injected.push_back(value == "true" ? "--" + key : "--" + key + "=" + value);
    }
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + span));
    // Injected values go right after the subcommand name.
    const std::size_t at = args.empty() ? 0 : 1;
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), injected.begin(), injected.end());
    break;
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kbnovelty: train knowledge-base completion scorers and measure triple novelty"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common common;
  const auto config_opt = [](CLI::App* cmd) {
    cmd->add_option("--config", "key=value file; flags on the command line override it")->type_name("FILE");
  };

  SplitArgs split;
  auto* split_cmd = app.add_subcommand("split", "Split positives into train/dev/test and attach eval negatives");
  split_cmd->add_option("--input", split.input, "Triple TSV (relation, head, tail[, confidence])")->required();
  split_cmd->add_option("--out", split.out, "Output directory")->required();
  split_cmd->add_option("--rule", split.rule, "Split rule")->check(CLI::IsMember({"confidence", "random"}));
  split_cmd->add_option("--test", split.test, "Test positives")->required();
  split_cmd->add_option("--dev", split.dev, "Dev positives")->required();
  split_cmd->add_option("--neg-ratio", split.neg_ratio, "Swap negatives per dev/test positive");
  add_common(split_cmd, common, true);
  config_opt(split_cmd);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a scorer with Adagrad and early stopping on dev F1");
  train_cmd->add_option("--split", tr.split, "Split directory written by 'split'")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--model", tr.model, "Model kind")
      ->check(CLI::IsMember({"factorized", "prototypical", "dnn", "bilinear"}));
  train_cmd->add_option("--vectors", tr.vectors, "Pretrained word vectors (text format with a 'count dim' header)");
  train_cmd->add_option("--d1", tr.d1, "Embedding size for random vectors when --vectors is absent");
  train_cmd->add_option("--d2", tr.cfg.d2, "Hidden units");
  train_cmd->add_option("--lr", tr.cfg.learning_rate, "Adagrad learning rate");
  train_cmd->add_option("--batch", tr.cfg.batch_size, "Batch size; 0 means 200 for dnn and 600 otherwise");
  train_cmd->add_option("--l2", tr.cfg.l2_weight, "L2 weight on the word embeddings");
  train_cmd->add_option("--epochs", tr.cfg.max_epochs, "Maximum epochs");
  train_cmd->add_option("--patience", tr.cfg.patience, "Epochs without dev F1 gain before stopping");
  train_cmd->add_option("--neg-ratio", tr.cfg.neg_ratio, "Fresh swap negatives per positive each epoch");
  train_cmd->add_option("--phi", tr.phi, "DNN nonlinearity")->check(CLI::IsMember({"relu", "tanh"}));
  train_cmd->add_option("--dnn-relation", tr.dnn_relation, "DNN relation input path")
      ->check(CLI::IsMember({"add", "none"}));
  add_common(train_cmd, common, false);
  config_opt(train_cmd);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "F1 on the whole test set and per novelty bucket");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint written by 'train'")->required();
  eval_cmd->add_option("--split", ev.split, "Split directory (test.tsv and train.tsv)");
  eval_cmd->add_option("--test", ev.test, "Labeled test TSV (overrides the split's test.tsv)");
  eval_cmd->add_option("--train", ev.train, "Training triple TSV for novelty (overrides the split's train.tsv)");
  eval_cmd->add_option("--vectors", ev.vectors, "Pretrained vectors for novelty; default: vectors.txt beside the checkpoint");
  eval_cmd->add_option("--thresholds", ev.thresholds,
                       "Bucket thresholds: paper_confidence, paper_random, paper_wikipedia, computed, or Q33,Q66");
  eval_cmd->add_option("--threshold", ev.threshold, "Probability cutoff; default: the checkpoint's dev threshold");
  eval_cmd->add_option("--out", ev.out, "Output directory for eval.tsv and config.txt");
  add_common(eval_cmd, common, false);
  config_opt(eval_cmd);

  RerankArgs rr;
  auto* rerank_cmd = app.add_subcommand("rerank", "Score and rank candidate triples, optionally per novelty bucket");
  rerank_cmd->add_option("--checkpoint", rr.checkpoint, "Checkpoint written by 'train'")->required();
  rerank_cmd->add_option("--candidates", rr.candidates, "Candidate triple TSV")->required();
  rerank_cmd->add_option("--out", rr.out, "Output directory")->required();
  rerank_cmd->add_option("--split", rr.split, "Split directory (for train.tsv)");
  rerank_cmd->add_option("--train", rr.train, "Training triple TSV for novelty");
  rerank_cmd->add_option("--vectors", rr.vectors, "Pretrained vectors for novelty; default: vectors.txt beside the checkpoint");
  rerank_cmd->add_option("--thresholds", rr.thresholds,
                         "Bucket thresholds: paper_confidence, paper_random, paper_wikipedia, computed, or Q33,Q66");
  rerank_cmd->add_option("--top", rr.top, "Keep only the N best candidates (and N per bucket with --buckets)");
  rerank_cmd->add_flag("--buckets", rr.buckets, "Also write near/mid/far top lists and an annotation sheet");
  rerank_cmd->add_flag("--dedup", rr.dedup, "Drop repeated candidate triples");
  rerank_cmd->add_option("--neighbors", rr.neighbors, "Nearest training triples shown per sheet row");
  rerank_cmd->add_option("--scale-min", rr.scale_min, "Lowest annotation score");
  rerank_cmd->add_option("--scale-max", rr.scale_max, "Highest annotation score");
  add_common(rerank_cmd, common, false);
  config_opt(rerank_cmd);

  NeighborArgs nb;
  auto* nb_cmd = app.add_subcommand("neighbors", "Nearest training triples of query triples");
  nb_cmd->add_option("--query", nb.query, "relation<TAB>head<TAB>tail (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  nb_cmd->add_option("--queries", nb.queries, "File of query triples or a ranked TSV");
  nb_cmd->add_option("--k", nb.k, "Neighbors per query")->check(CLI::PositiveNumber);
  nb_cmd->add_option("--split", nb.split, "Split directory (for train.tsv)");
  nb_cmd->add_option("--train", nb.train, "Training triple TSV");
  nb_cmd->add_option("--vectors", nb.vectors, "Pretrained word vectors")->required();
  nb_cmd->add_option("--out", nb.out, "Output TSV; default stdout");
  add_common(nb_cmd, common, false);
  config_opt(nb_cmd);

  CurveArgs cv;
  auto* curve_cmd = app.add_subcommand("curve", "Mean novelty distance of the top K ranked triples");
  curve_cmd->add_option("--ranked", cv.ranked, "Ranked TSV from 'rerank' (or a triple TSV in rank order)")->required();
  curve_cmd->add_option("--ks", cv.ks, "Comma-separated K values; default 1..10, then 20, 50, 100, ... and the list length");
  curve_cmd->add_option("--split", cv.split, "Split directory (for train.tsv)");
  curve_cmd->add_option("--train", cv.train, "Training triple TSV");
  curve_cmd->add_option("--vectors", cv.vectors, "Pretrained word vectors")->required();
  curve_cmd->add_option("--out", cv.out, "Output TSV; default stdout");
  add_common(curve_cmd, common, false);
  config_opt(curve_cmd);

  AgreeArgs ag;
  auto* agree_cmd = app.add_subcommand("agree", "Agreement between two completed annotation sheets");
  agree_cmd->add_option("first", ag.first, "First completed sheet")->required();
  agree_cmd->add_option("second", ag.second, "Second completed sheet")->required();
  agree_cmd->add_option("--out", ag.out, "Output TSV; default stdout");
  config_opt(agree_cmd);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }

  try {
    if (*split_cmd) return run_split(split, common, *split_cmd);
    if (*train_cmd) return run_train(tr, common, *train_cmd);
    if (*eval_cmd) return run_eval(ev, common, *eval_cmd);
    if (*rerank_cmd) return run_rerank(rr, common, *rerank_cmd);
    if (*nb_cmd) return run_neighbors(nb, common, *nb_cmd);
    if (*curve_cmd) return run_curve(cv, common, *curve_cmd);
    if (*agree_cmd) return run_agree(ag, *agree_cmd);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
