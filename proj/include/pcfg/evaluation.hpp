#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcfg/bracket.hpp"
#include "pcfg/grammar.hpp"

namespace pcfg {

struct F1Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Drops width-1 spans and the whole-sentence span. Throws StructuralError on
// spans outside [0, n].
SpanSet filter_trivial(const SpanSet &spans, int n);

// Constituent spans of an n-ary labelled tree over its terminals, labelled
// with the phrase label. Preterminals and terminals contribute no spans.
SpanSet labeled_tree_spans(const LabeledTree &tree, SpanPolicy policy = SpanPolicy::kExcludeTrivial);

// Unlabelled span matching after trivial-span removal. Both empty → (1,1,1);
// exactly one empty → (0,0,0).
F1Scores sentence_f1(const SpanSet &pred, const SpanSet &gold, int n);

struct EvalRecord {
  std::string id;
  int length = 0;
  int unk_count = 0;
  SpanSet pred;  // trivial spans removed
  SpanSet gold;  // trivial spans removed
  F1Scores scores;
  long tp = 0, fp = 0, fn = 0;
};

EvalRecord make_record(std::string id, int length, int unk_count, const SpanSet &pred, const SpanSet &gold);

struct LengthStats {
  long sentences = 0;
  double sentence_f1 = 0.0;
  double corpus_f1 = 0.0;
  long tp = 0, fp = 0, fn = 0;
};

struct MetricsReport {
  long sentences = 0;
  long tp = 0, fp = 0, fn = 0;
  double corpus_precision = 0.0;
  double corpus_recall = 0.0;
  double corpus_f1 = 0.0;
  double sentence_f1 = 0.0;  // mean of per-sentence F1
  std::map<int, LengthStats> by_length;
};

// Pools counts over sentences. Throws DegenerateInputError on an empty list.
MetricsReport corpus_f1(const std::vector<EvalRecord> &records);

enum class Branching { kLeft, kRight };

// Throws DegenerateInputError for n < 2.
ParseTree branching_baseline(int n, Branching direction);

// For each position, the index whose tree it receives. Within each length
// group the assignment is a uniform permutation seeded by (seed, length).
std::vector<std::size_t> perm_assignment(const std::vector<int> &lengths, std::uint64_t seed);

template <typename T>
std::vector<T> perm_baseline(const std::vector<T> &items, const std::vector<int> &lengths, std::uint64_t seed) {
  const auto src = perm_assignment(lengths, seed);
  std::vector<T> out;
  out.reserve(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) out.push_back(items[src[k]]);
  return out;
}

// One JSON object per line: {"id", "tokens", "length", "unk_count",
// "spans": [[i, j], ...], optional "labels": [...], "tree" and "logp"}. Spans
// are stored unfiltered.
struct SpanRecord {
  std::string id;
  std::vector<std::string> tokens;
  int length = 0;
  int unk_count = 0;
  SpanSet spans;
  std::string tree;
  std::optional<double> logp;
};

nlohmann::json to_json(const SpanRecord &r);
SpanRecord span_record_from_json(const nlohmann::json &j);
void write_span_records(const std::string &path, const std::vector<SpanRecord> &records);
// Throws DataError with the line number on malformed lines.
std::vector<SpanRecord> read_span_records(const std::string &path);

// Joins predictions with gold by id. Throws DataError for predictions with
// no gold entry or mismatched lengths.
std::vector<EvalRecord> join_records(const std::vector<SpanRecord> &pred, const std::vector<SpanRecord> &gold);

nlohmann::json to_json(const MetricsReport &m);
void write_length_csv(const std::string &path, const MetricsReport &m);

}  // namespace pcfg
