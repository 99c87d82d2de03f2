#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace pcfg {

using TokenCorpus = std::vector<std::vector<std::string>>;

inline constexpr const char *kUnkToken = "<unk>";

// Dense word index with `<unk>` as the last entry.
class Vocabulary {
 public:
  Vocabulary() = default;

  // Words ranked by descending frequency, ties broken lexicographically; the
  // top `size_cap` are kept and `<unk>` is appended. Literal `<unk>` tokens in
  // the corpus count towards the unknown entry. Throws DegenerateInputError
  // on an empty corpus.
  static Vocabulary build(const TokenCorpus &corpus, int size_cap, bool lowercase = false);

  // Keeps the given order; appends `<unk>` unless already listed.
  static Vocabulary from_words(const std::vector<std::string> &words, bool lowercase = false);

  int size() const { return static_cast<int>(words_.size()); }
  int unk_index() const { return unk_index_; }
  bool lowercase() const { return lowercase_; }
  int size_cap() const { return size_cap_; }

  // True for in-vocabulary words other than `<unk>`.
  bool contains(const std::string &word) const;
  // Index of the word, or unk_index().
  int index(const std::string &word) const;
  const std::string &word(int index) const { return words_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string> &words() const { return words_; }
  long count(int index) const { return counts_.at(static_cast<std::size_t>(index)); }

  std::vector<int> encode(const std::vector<std::string> &tokens) const;
  std::string normalize(const std::string &word) const;

  // `word<TAB>index<TAB>count` lines.
  void write(const std::string &path) const;
  static Vocabulary read(const std::string &path, bool lowercase = false);

 private:
  void add(const std::string &word, long count);

  std::vector<std::string> words_;
  std::vector<long> counts_;
  std::unordered_map<std::string, int> index_;
  int unk_index_ = -1;
  int size_cap_ = 0;
  bool lowercase_ = false;
};

struct PretrainedEmbeddings {
  int dim = 0;
  std::vector<std::string> words;  // file order
  std::unordered_map<std::string, Eigen::VectorXd> vectors;

  bool has(const std::string &w) const { return vectors.count(w) != 0; }
};

// Whitespace-separated `word v1 ... vd` lines, no header. The dimension comes
// from the first line (or `expected_dim`). Throws DataError with the line
// number on inconsistent or non-numeric rows. Later duplicates are ignored.
PretrainedEmbeddings load_embeddings(const std::string &path, std::optional<int> expected_dim = std::nullopt);
void write_embeddings(const std::string &path, const PretrainedEmbeddings &emb, int significant_digits = 6);

enum class RowSource { kPretrained, kLearned, kRandom, kUnkShared };
const char *to_string(RowSource s);

struct EmbeddingTable {
  Eigen::MatrixXd matrix;          // [|vocab|, d]
  std::vector<RowSource> sources;  // one tag per row
};

enum class SelectionStrategy { kDirect, kRandom, kUnknown, kStandard };
const char *to_string(SelectionStrategy s);
SelectionStrategy parse_strategy(const std::string &name);

struct WordAssignment {
  std::string word;
  RowSource source;  // kUnkShared: mapped onto the unknown row
};

struct SelectionReport {
  SelectionStrategy strategy = SelectionStrategy::kRandom;
  std::vector<WordAssignment> assignments;  // one per candidate vocabulary entry
  std::map<std::string, long> counts;       // per source tag; sums to assignments.size()
  double type_rate = 0.0;                   // against the reference corpus
  double token_rate = 0.0;
};

struct Selection {
  Vocabulary vocab;
  EmbeddingTable table;
  SelectionReport report;
};

// Test-time embedding selection. `learned` is indexed by `train_vocab`; the
// Direct and Standard strategies require it (ConfigError otherwise). Random
// rows are uniform on [-0.1, 0.1] from `seed`. The unknown row is the
// pretrained `<unk>` vector when the file has one, else the learned unknown
// row, else random. Rates are computed on `reference` when non-empty.
Selection select_embeddings(SelectionStrategy strategy, const Vocabulary &train_vocab,
                            const Vocabulary &target_vocab, const PretrainedEmbeddings &pretrained,
                            const EmbeddingTable *learned, std::uint64_t seed, const TokenCorpus &reference = {});

struct UnknownStats {
  double type_rate = 0.0;
  double token_rate = 0.0;
};

// Throws DegenerateInputError on an empty corpus.
UnknownStats unknown_stats(const TokenCorpus &corpus, const Vocabulary &vocab);

}  // namespace pcfg
