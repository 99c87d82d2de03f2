#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace pcfg {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Symbol alphabets: nonterminals 0..N-1, preterminals 0..P-1, words 0..V-1.
// Inside charts and binary children use a combined index where preterminal
// t maps to N + t.
struct GrammarShape {
  int num_nonterminals = 10;
  int num_preterminals = 20;
  int vocab_size = 1;

  int num_symbols() const { return num_nonterminals + num_preterminals; }
  bool is_nonterminal(int combined) const { return combined < num_nonterminals; }
  void check() const;
  bool operator==(const GrammarShape &) const = default;
};

enum class TableMode { kNormalized, kPotential };

// Log-potentials for the three rule families S->A, A->BC, T->w.
class RuleTable {
 public:
  RuleTable() = default;
  // All entries initialised to `fill`.
  explicit RuleTable(const GrammarShape &shape, double fill = 0.0);

  const GrammarShape &shape() const { return shape_; }

  double &start(int a) { return start_[a]; }
  double start(int a) const { return start_[a]; }
  double &binary(int a, int b, int c) { return binary_[binary_index(a, b, c)]; }
  double binary(int a, int b, int c) const { return binary_[binary_index(a, b, c)]; }
  double &preterm(int t, int w) { return preterm_[preterm_index(t, w)]; }
  double preterm(int t, int w) const { return preterm_[preterm_index(t, w)]; }

  std::span<double> start_logp() { return start_; }
  std::span<const double> start_logp() const { return start_; }
  std::span<double> binary_logp() { return binary_; }
  std::span<const double> binary_logp() const { return binary_; }
  std::span<double> preterm_logp() { return preterm_; }
  std::span<const double> preterm_logp() const { return preterm_; }

  // Children pair (b, c) of parent a occupy a contiguous row of S*S entries.
  std::span<const double> binary_row(int a) const;
  std::span<const double> preterm_row(int t) const;

  std::size_t binary_index(int a, int b, int c) const {
    const std::size_t s = static_cast<std::size_t>(shape_.num_symbols());
    return (static_cast<std::size_t>(a) * s + static_cast<std::size_t>(b)) * s +
           static_cast<std::size_t>(c);
  }
  std::size_t preterm_index(int t, int w) const {
    return static_cast<std::size_t>(t) * static_cast<std::size_t>(shape_.vocab_size) +
           static_cast<std::size_t>(w);
  }

  // Row-wise log-softmax of every distribution in place.
  void normalize();

 private:
  GrammarShape shape_;
  std::vector<double> start_;
  std::vector<double> binary_;
  std::vector<double> preterm_;
};

struct ValidationReport {
  bool passed = true;
  double max_error = 0.0;       // largest |logsumexp(row)| over all rows
  std::string failure;          // location of the first failure, if any
};

ValidationReport validate_grammar(const RuleTable &table, TableMode mode);

// Normalized table with Gaussian log-potentials of the given scale.
RuleTable random_rule_table(const GrammarShape &shape, std::uint64_t seed, double scale = 1.0);

struct Span {
  int start = 0;
  int end = 0;
  int width() const { return end - start; }
  auto operator<=>(const Span &) const = default;
};

enum class SpanPolicy {
  kExcludeTrivial,  // drop the whole-sentence span and width-1 spans
  kKeepAll,
};

struct SpanSet {
  std::set<Span> spans;
  std::map<Span, std::string> labels;

  std::size_t size() const { return spans.size(); }
  bool contains(const Span &s) const { return spans.count(s) > 0; }
  void insert(Span s, std::string label = {});
  bool operator==(const SpanSet &o) const { return spans == o.spans; }
};

struct TreeNode {
  int start = 0;
  int end = 0;
  int split = -1;  // -1 for leaves
  int left = -1;
  int right = -1;
  int symbol = -1;  // nonterminal index for internal nodes, preterminal for leaves; -1 unknown
  bool is_leaf() const { return split < 0; }
};

// Binary constituency tree. Nodes are stored in a flat vector; the root
// index is explicit.
class ParseTree {
 public:
  ParseTree() = default;

  int add_leaf(int position, int preterminal = -1);
  int add_internal(int left, int right, int nonterminal = -1);
  void set_root(int node);

  int length() const { return length_; }
  int root() const { return root_; }
  const TreeNode &node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  const std::vector<TreeNode> &nodes() const { return nodes_; }

  // Checks tiling, split bounds and that every position is covered once.
  void validate() const;

  static ParseTree single_leaf(int preterminal = -1);
  static ParseTree right_branching(int n);
  static ParseTree left_branching(int n);
  // Rebuilds a binary tree from its complete span set (including the root
  // span). Throws StructuralError if the spans do not form a binary tree.
  static ParseTree from_spans(int n, const std::set<Span> &spans);

  bool operator==(const ParseTree &other) const;

 private:
  std::vector<TreeNode> nodes_;
  int root_ = -1;
  int length_ = 0;
};

SpanSet tree_to_spans(const ParseTree &tree, SpanPolicy policy = SpanPolicy::kExcludeTrivial);

struct Sentence {
  std::vector<int> tokens;
  std::vector<std::string> raw_tokens;
  std::string id;

  int length() const { return static_cast<int>(tokens.size()); }
};

struct Sample {
  Sentence sentence;
  ParseTree tree;
};

// Ancestral top-down sampling. Returns nullopt when the yield would exceed
// max_length. Words are rendered as "w<index>" unless `words` is given.
std::optional<Sample> sample_sentence(const RuleTable &table, int max_length, std::uint64_t seed,
                                      const std::vector<std::string> *words = nullptr);

// Log-probability of a fully labelled tree (every node symbol set).
double tree_log_prob(const RuleTable &table, const ParseTree &tree, std::span<const int> tokens);

// Bracketed serialisation `(A0 (T1 word) (A2 ...))`. Unlabelled internal
// nodes are written as X, unlabelled leaves as T.
std::string to_bracketed(const ParseTree &tree, std::span<const std::string> words);

// Inverse of to_bracketed for binary trees; labels A<k>/T<k> restore symbols.
struct BracketedBinary {
  ParseTree tree;
  std::vector<std::string> words;
};
BracketedBinary parse_binary_bracketed(const std::string &text);

double logsumexp(std::span<const double> xs);

}  // namespace pcfg
