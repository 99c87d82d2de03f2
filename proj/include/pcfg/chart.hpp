#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "pcfg/grammar.hpp"

namespace pcfg {

// Dense [start, end, symbol] table over spans 0 <= i < j <= n. Symbols use
// the combined index (nonterminals first, then preterminals).
class SpanChart {
 public:
  SpanChart() = default;
  SpanChart(int n, int num_symbols, double fill)
      : n_(n), symbols_(num_symbols),
        cells_(static_cast<std::size_t>(n + 1) * static_cast<std::size_t>(n + 1) *
                   static_cast<std::size_t>(num_symbols),
               fill) {}

  int length() const { return n_; }
  int num_symbols() const { return symbols_; }
  double &at(int i, int j, int s) { return cells_[index(i, j, s)]; }
  double at(int i, int j, int s) const { return cells_[index(i, j, s)]; }
  const std::vector<double> &data() const { return cells_; }
  std::vector<double> &data() { return cells_; }

 private:
  std::size_t index(int i, int j, int s) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(n_ + 1) + static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(symbols_) +
           static_cast<std::size_t>(s);
  }
  int n_ = 0;
  int symbols_ = 0;
  std::vector<double> cells_;
};

struct InsideChart {
  SpanChart beta;
  double log_marginal = kNegInf;
};

struct OutsideChart {
  SpanChart alpha;
};

// Dense [start, end] table of values; only width >= 2 entries are meaningful
// for span posteriors.
class SpanTable {
 public:
  SpanTable() = default;
  SpanTable(int n, double fill)
      : n_(n), cells_(static_cast<std::size_t>(n + 1) * static_cast<std::size_t>(n + 1), fill) {}
  int length() const { return n_; }
  double &at(int i, int j) { return cells_[index(i, j)]; }
  double at(int i, int j) const { return cells_[index(i, j)]; }

 private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_ + 1) + static_cast<std::size_t>(j);
  }
  int n_ = 0;
  std::vector<double> cells_;
};

struct PosteriorTable {
  SpanTable span_post;

  int length() const { return span_post.length(); }
};

// Expected rule counts share the RuleTable layout; entries are counts, not
// log-probabilities.
using CountTable = RuleTable;

// Inside pass. Throws DegenerateInputError for n < 2 and StructuralError for
// token indices outside the preterminal table.
InsideChart inside(const RuleTable &table, const Sentence &sentence);

OutsideChart outside(const RuleTable &table, const Sentence &sentence, const InsideChart &inside);

// Throws NoParseError when log p(w) is -inf.
PosteriorTable span_posteriors(const InsideChart &inside, const OutsideChart &outside);

// E[#r | w] for every rule r; equals d log p(w) / d (log-potential of r).
CountTable expected_rule_counts(const RuleTable &table, const Sentence &sentence, const InsideChart &inside,
                                const OutsideChart &outside);

// Counts, their directional derivative, and span posteriors for the
// perturbed potentials where every width >= 2 constituent over (i, j) gains
// eta * weights(i, j). Derivatives are taken at eta = 0, so
// `count_tangent[r]` is d/d(log-potential r) of sum_{ij} weights(i,j) * post(i,j).
struct DirectionalCounts {
  double log_marginal = kNegInf;
  CountTable counts;
  CountTable count_tangent;
  PosteriorTable posteriors;
  double weighted_posterior = 0.0;  // sum_{ij} weights(i,j) * post(i,j)
};

DirectionalCounts expected_counts_directional(const RuleTable &table, const Sentence &sentence,
                                              const SpanTable &weights);

// Maximises the summed width >= 2 span posteriors; ties go to the smallest split.
ParseTree mbr_decode(const PosteriorTable &posteriors);

// Sum of span posteriors over the width >= 2 spans of a tree.
double mbr_objective(const PosteriorTable &posteriors, const ParseTree &tree);

struct ViterbiResult {
  ParseTree tree;
  double log_prob = kNegInf;
};

// Most probable labelled tree; ties go to the smallest split, then the
// smallest symbol index. Throws NoParseError if no parse exists.
ViterbiResult viterbi_decode(const RuleTable &table, const Sentence &sentence);

// ----- Brute-force oracles -----

// All binary bracketings of n tokens, Catalan(n-1) of them.
std::vector<ParseTree> enumerate_bracketings(int n);

// log sum over symbol assignments for each bracketing, in enumeration order.
std::vector<std::pair<ParseTree, double>> brute_force_bracketing_scores(const RuleTable &table,
                                                                        const Sentence &sentence,
                                                                        int max_n = 8);

// Enumerates every bracketing and every symbol assignment. Throws
// DegenerateInputError when n > max_n.
double brute_force_marginal(const RuleTable &table, const Sentence &sentence, int max_n = 8);

// Best labelled tree by enumeration.
ViterbiResult brute_force_viterbi(const RuleTable &table, const Sentence &sentence, int max_n = 8);

}  // namespace pcfg
