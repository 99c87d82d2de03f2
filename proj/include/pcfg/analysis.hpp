#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pcfg/bracket.hpp"
#include "pcfg/evaluation.hpp"
#include "pcfg/lexicon.hpp"

namespace pcfg {

// Counted labels, rules and words of a labelled treebank. Rule signatures are
// `LHS -> RHS1 RHS2 ...`; lexical rules are preterminal -> word.
struct FactorInventory {
  std::map<std::string, long> labels;
  std::map<std::string, long> lexical_rules;
  std::map<std::string, long> nonlexical_rules;
  std::map<std::string, long> words;
};

// `ids` (optional) name trees in error messages. With `vocab`, words in
// lexical rules and the word factor are mapped through it (OOV → `<unk>`).
// Throws DegenerateInputError on an empty treebank and DataError on a
// malformed tree.
FactorInventory extract_factors(const std::vector<LabeledTree> &treebank, const std::vector<std::string> &ids = {},
                                const Vocabulary *vocab = nullptr);

struct OverlapRate {
  double type_rate = 0.0;
  double instance_rate = 0.0;
};

// Keyed by factor: labels, rules, rules-lexical, rules-non-lexical, words.
using OverlapReport = std::map<std::string, OverlapRate>;

// Type and instance coverage of the test inventory by the training one. A
// factor with no test instances gets rate 0. Throws DegenerateInputError if
// the test inventory is empty.
OverlapReport overlap_rates(const FactorInventory &train, const FactorInventory &test);
void write_overlap_csv(const std::string &path, const OverlapReport &report);

struct ErrorBucketRow {
  int length_lo = 0;  // inclusive
  int length_hi = 0;  // inclusive
  int unk_count = 0;
  long recognized = 0;
  long unrecognized = 0;
  double ratio = 0.0;  // +inf when unrecognized = 0
  long sentences = 0;
};

struct ErrorBucketTable {
  int bucket_width = 3;
  std::vector<ErrorBucketRow> rows;  // ordered by (length bucket, unk count)
};

// Length bucket floor(length / bucket_width), i.e. lengths [b*w, b*w + w - 1].
// Throws ConfigError when bucket_width < 1.
ErrorBucketTable error_buckets(const std::vector<EvalRecord> &records, int bucket_width = 3);
void write_bucket_csv(const std::string &path, const ErrorBucketTable &table);

struct CorrelationResult {
  double rho = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

// Average ranks for ties; two-sided p-value from the t approximation with
// n - 2 degrees of freedom. Throws DegenerateInputError for mismatched or
// short (< 3) input and DegenerateTestError for a constant series.
CorrelationResult spearman(const std::vector<double> &xs, const std::vector<double> &ys);

struct PairedTestResult {
  double t_stat = 0.0;
  double p_value = 1.0;
  double mean_diff = 0.0;
  double std_diff = 0.0;  // sample standard deviation of a - b
  std::size_t n = 0;
};

// Paired two-sided t-test on a - b. Throws DegenerateInputError for
// mismatched lengths or n < 2, DegenerateTestError for zero variance.
PairedTestResult paired_t_test(const std::vector<double> &a, const std::vector<double> &b);

enum class SeedCondition { kRM, kRMRD, kVRM };
const char *to_string(SeedCondition c);
SeedCondition parse_condition(const std::string &name);

struct RunSpec {
  SeedCondition condition = SeedCondition::kRM;
  int seed_index = 0;
  std::uint64_t model_seed = 0;
  std::uint64_t data_seed = 0;
  bool grounded = false;
};

struct RunOutcome {
  double sentence_f1 = 0.0;
  double corpus_f1 = 0.0;
  std::vector<long> batch_order;  // first item index of each consumed batch
  std::uint64_t init_checksum = 0;
};

struct SeedRun {
  RunSpec spec;
  RunOutcome outcome;
};

struct ProtocolSettings {
  std::uint64_t base_model_seed = 0;
  std::uint64_t base_data_seed = 0;
  int num_seeds = 2;
  bool corpus_has_images = false;
};

// RM: model seed varies with the seed index, data order fixed. RM+RD: both
// vary. V-RM: as RM with the grounding loss on. The same seed index always
// maps to the same model seed. Throws ConfigError for V-RM without images.
std::vector<SeedRun> seed_experiment_protocol(const ProtocolSettings &settings,
                                              const std::vector<SeedCondition> &conditions,
                                              const std::function<RunOutcome(const RunSpec &)> &train);

// S-F1 column of one condition ordered by seed index.
std::vector<double> condition_scores(const std::vector<SeedRun> &runs, SeedCondition c);
void write_seed_table_csv(const std::string &path, const std::vector<SeedRun> &runs);

}  // namespace pcfg
