#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcfg/analysis.hpp"
#include "pcfg/bracket.hpp"
#include "pcfg/checkpoint.hpp"
#include "pcfg/evaluation.hpp"
#include "pcfg/grounding.hpp"
#include "pcfg/lexicon.hpp"
#include "pcfg/trainer.hpp"

namespace pcfg {

// ----- Corpora -----

struct TreebankEntry {
  std::string id;
  std::vector<std::string> tokens;
  SpanSet spans;  // every constituent span of width >= 2, labelled
  LabeledTree tree;
};

struct Treebank {
  std::string path;
  std::vector<TreebankEntry> entries;
};

// Strips function tags and indices after `-` or `=` (NP-SBJ-1 → NP, NP=2 →
// NP). Labels starting with `-` such as -NONE- or -LRB- are kept.
std::string normalize_label(const std::string &label);

// Normalises labels and removes -NONE- subtrees and phrases left empty.
// Returns nullopt when nothing remains.
std::optional<LabeledTree> clean_tree(const LabeledTree &tree);

// Trees with no tokens left after cleaning are skipped. Ids are the 0-based
// tree index in the file.
Treebank treebank_from_trees(const std::vector<LabeledTree> &trees, const std::string &path = {});

// One bracketed tree per line or blank-line separated multi-line trees.
// Throws DataError on unbalanced input or an empty file.
Treebank read_treebank(const std::string &path);
void write_treebank(const std::string &path, const std::vector<LabeledTree> &trees);

// Whitespace-tokenised lines; CRLF is normalised. Empty lines are skipped
// and counted in `skipped`. Sentence ids are the 0-based line index.
struct TextCorpus {
  TokenCorpus tokens;
  std::vector<std::string> ids;
  long skipped = 0;
};
TextCorpus read_token_lines(const std::string &path);

Sentence make_sentence(const std::vector<std::string> &tokens, const Vocabulary &vocab, std::string id = {});
std::vector<Sentence> read_plaintext(const std::string &path, const Vocabulary &vocab, long *skipped = nullptr);

inline int token_count(const Sentence &s) { return s.length(); }
inline int token_count(const TreebankEntry &e) { return static_cast<int>(e.tokens.size()); }
inline int token_count(const std::vector<std::string> &t) { return static_cast<int>(t.size()); }

// Keeps items with fewer than `max_tokens_exclusive` tokens.
template <typename T>
std::vector<T> filter_by_length(const std::vector<T> &items, double max_tokens_exclusive) {
  std::vector<T> out;
  for (const auto &x : items)
    if (static_cast<double>(token_count(x)) < max_tokens_exclusive) out.push_back(x);
  return out;
}

inline Treebank filter_by_length(const Treebank &tb, double max_tokens_exclusive) {
  return {tb.path, filter_by_length(tb.entries, max_tokens_exclusive)};
}

// ----- Synthetic data -----

struct SyntheticGrammar {
  RuleTable table;
  std::vector<std::string> nonterminal_names;
  std::vector<std::string> preterminal_names;
  std::vector<std::string> words;
};

// Fixed 3-nonterminal / 4-preterminal grammar (S, NP, VP; Det, Adj, N, V)
// with disjoint 5-word lexicons whose probabilities are drawn from `seed`.
SyntheticGrammar toy_grammar(std::uint64_t seed);

struct SyntheticCorpus {
  std::vector<Sample> samples;
  std::vector<LabeledTree> trees;
};

// Rejection-samples `count` sentences with min_length <= n <= max_length.
SyntheticCorpus sample_corpus(const SyntheticGrammar &g, int count, int min_length, int max_length,
                              std::uint64_t seed);

LabeledTree to_labeled_tree(const ParseTree &tree, const std::vector<std::string> &words,
                            const std::vector<std::string> &nonterminal_names,
                            const std::vector<std::string> &preterminal_names);

// Image for each sample: for every gold constituent of width >= 2 with label
// A and every word w it covers, adds 1/width to coordinate (A, w); then adds
// Gaussian noise of the given scale. Dimension |N| * |V|.
std::vector<ImageVector> synthetic_images(const SyntheticGrammar &g, const SyntheticCorpus &corpus, double noise,
                                          std::uint64_t seed, const std::vector<std::string> &ids);

// ----- Configuration -----

struct ExperimentConfig {
  std::string train_path;
  std::string train_format = "text";  // text | treebank
  std::string dev_path;               // treebank with gold trees
  std::string test_path;
  std::string test_format = "text";
  std::string gold_path;
  std::string image_path;
  std::string embeddings_path;
  bool freeze_embeddings = true;
  std::string output_dir = "out";
  std::string resume_from;

  int vocab_size = 10000;
  bool lowercase = false;
  double max_length = 0.0;  // 0 disables the length filter

  ModelDims model;
  TrainingConfig training;  // margin is the grounding hinge margin
  double init_scale = 0.2;
  double word_init_scale = 1.0;
  int checkpoint_every = 1;

  std::string strategy = "random";
  std::string decoder = "mbr";
  std::uint64_t selection_seed = 0;
  std::uint64_t perm_seed = 0;
  int bucket_width = 3;

  ExperimentConfig();
  void check() const;
};

nlohmann::json to_json(const ExperimentConfig &c);
// Unknown keys are rejected with ConfigError.
ExperimentConfig config_from_json(const nlohmann::json &j);
// Applies `key=value` with dotted keys (e.g. training.alpha=0.5); the value
// is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json &j, const std::string &assignment);
ExperimentConfig load_config(const std::string &path, const std::vector<std::string> &overrides = {});

// Output directory after the PCFG_OUTPUT_DIR environment override.
std::string resolve_output_dir(const ExperimentConfig &c);

// ----- Drivers -----

struct TrainRun {
  TrainerState state;
  Vocabulary vocab;
  std::string checkpoint_path;
};

// Builds the vocabulary, loads embeddings, pairs images by sentence id, and
// trains with per-epoch checkpoints (`checkpoint-epoch<k>.bin` and
// `checkpoint-last.bin`) plus `train_log.jsonl` in the output directory.
// Resumes from `resume_from` when set.
TrainRun run_train(const ExperimentConfig &config, std::ostream *progress = nullptr);

Checkpoint make_checkpoint(const TrainerState &state, const Vocabulary &vocab, const ExperimentConfig &config);
Vocabulary checkpoint_vocabulary(const Checkpoint &ckpt);
TrainerState checkpoint_state(const Checkpoint &ckpt);

struct ParseRun {
  std::vector<SpanRecord> predictions;
  std::vector<double> log_marginals;  // NaN for single-token sentences
  SelectionReport selection;
};

// Zero-shot parsing of `sentences` (raw tokens) with the given strategy.
ParseRun parse_corpus(const Checkpoint &ckpt, const TokenCorpus &sentences, const std::vector<std::string> &ids,
                      SelectionStrategy strategy, const PretrainedEmbeddings &pretrained, Decoder decoder,
                      std::uint64_t selection_seed);

// Reads the checkpoint and test corpus from the config, writes
// predictions.jsonl and selection.json. Never reads image vectors.
ParseRun run_parse(const ExperimentConfig &config, const std::string &checkpoint_path);

void write_predictions(const std::string &path, const ParseRun &run);

// Gold spans from a treebank (or a JSON-lines span file).
std::vector<SpanRecord> load_gold(const std::string &path);

struct EvaluateRun {
  MetricsReport metrics;
  std::optional<MetricsReport> perm_metrics;
  std::vector<EvalRecord> records;
};

// Throws DataError listing ids when prediction and gold sets differ.
EvaluateRun run_evaluate(const std::string &predictions_path, const std::string &gold_path,
                         const std::string &output_dir, std::optional<std::uint64_t> perm_seed);

OverlapReport run_analyze_overlap(const std::string &train_treebank, const std::string &test_treebank,
                                  const std::string &output_dir, const Vocabulary *vocab = nullptr);

ErrorBucketTable run_analyze_errors(const std::string &predictions_path, const std::string &gold_path,
                                    int bucket_width, const std::string &output_dir);

// Paired test over two CSV columns (header row, comma separated).
PairedTestResult run_significance(const std::string &csv_path, const std::string &column_a,
                                  const std::string &column_b, const std::string &output_dir);

}  // namespace pcfg
