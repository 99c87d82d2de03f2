#include "pcfg/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "pcfg/bracket.hpp"
#include "pcfg/errors.hpp"
#include "pcfg/random.hpp"

namespace pcfg {

double logsumexp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  if (std::isinf(m)) return m;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

void GrammarShape::check() const {
  if (num_nonterminals < 1 || num_preterminals < 1 || vocab_size < 1)
    throw StructuralError("grammar shape counts must all be >= 1");
}

RuleTable::RuleTable(const GrammarShape &shape, double fill) : shape_(shape) {
  shape.check();
  const auto n = static_cast<std::size_t>(shape.num_nonterminals);
  const auto s = static_cast<std::size_t>(shape.num_symbols());
  start_.assign(n, fill);
  binary_.assign(n * s * s, fill);
  preterm_.assign(static_cast<std::size_t>(shape.num_preterminals) *
                      static_cast<std::size_t>(shape.vocab_size),
                  fill);
}

std::span<const double> RuleTable::binary_row(int a) const {
  const std::size_t s = static_cast<std::size_t>(shape_.num_symbols());
  return std::span<const double>(binary_).subspan(static_cast<std::size_t>(a) * s * s, s * s);
}

std::span<const double> RuleTable::preterm_row(int t) const {
  const std::size_t v = static_cast<std::size_t>(shape_.vocab_size);
  return std::span<const double>(preterm_).subspan(static_cast<std::size_t>(t) * v, v);
}

namespace {

void log_normalize(std::span<double> row) {
  const double z = logsumexp(row);
  for (double &x : row) x -= z;
}

}  // namespace

void RuleTable::normalize() {
  log_normalize(start_);
  const std::size_t s = static_cast<std::size_t>(shape_.num_symbols());
  for (int a = 0; a < shape_.num_nonterminals; ++a)
    log_normalize(std::span<double>(binary_).subspan(static_cast<std::size_t>(a) * s * s, s * s));
  const std::size_t v = static_cast<std::size_t>(shape_.vocab_size);
  for (int t = 0; t < shape_.num_preterminals; ++t)
    log_normalize(std::span<double>(preterm_).subspan(static_cast<std::size_t>(t) * v, v));
}

ValidationReport validate_grammar(const RuleTable &table, TableMode mode) {
  const GrammarShape &g = table.shape();
  g.check();
  const auto n = static_cast<std::size_t>(g.num_nonterminals);
  const auto s = static_cast<std::size_t>(g.num_symbols());
  if (table.start_logp().size() != n || table.binary_logp().size() != n * s * s ||
      table.preterm_logp().size() !=
          static_cast<std::size_t>(g.num_preterminals) * static_cast<std::size_t>(g.vocab_size))
    throw StructuralError("rule table dimensions do not match its grammar shape");

  ValidationReport report;
  auto fail = [&](const std::string &where) {
    if (report.passed) report.failure = where;
    report.passed = false;
  };
  auto scan = [&](std::span<const double> row, const std::string &where) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double x = row[i];
      if (std::isnan(x)) {
        fail("NaN in " + where + " at column " + std::to_string(i));
        report.max_error = std::numeric_limits<double>::quiet_NaN();
        return;
      }
      if (x == std::numeric_limits<double>::infinity()) {
        fail("+inf in " + where + " at column " + std::to_string(i));
        return;
      }
    }
    if (mode == TableMode::kNormalized) {
      const double err = std::abs(logsumexp(row));
      if (!std::isnan(report.max_error)) report.max_error = std::max(report.max_error, err);
      if (!(err < 1e-6)) fail(where + " is not normalized (|logsumexp| = " + std::to_string(err) + ")");
    }
  };

  scan(table.start_logp(), "start rules");
  for (int a = 0; a < g.num_nonterminals; ++a)
    scan(table.binary_row(a), "binary rules of A" + std::to_string(a));
  for (int t = 0; t < g.num_preterminals; ++t)
    scan(table.preterm_row(t), "preterminal rules of T" + std::to_string(t));
  return report;
}

RuleTable random_rule_table(const GrammarShape &shape, std::uint64_t seed, double scale) {
  RuleTable table(shape);
  Rng rng(seed);
  for (double &x : table.start_logp()) x = scale * rng.normal();
  for (double &x : table.binary_logp()) x = scale * rng.normal();
  for (double &x : table.preterm_logp()) x = scale * rng.normal();
  table.normalize();
  return table;
}

void SpanSet::insert(Span s, std::string label) {
  spans.insert(s);
  if (!label.empty()) labels.emplace(s, std::move(label));
}

int ParseTree::add_leaf(int position, int preterminal) {
  if (position < 0) throw StructuralError("leaf position must be non-negative");
  TreeNode node;
  node.start = position;
  node.end = position + 1;
  node.symbol = preterminal;
  nodes_.push_back(node);
  return static_cast<int>(nodes_.size()) - 1;
}

int ParseTree::add_internal(int left, int right, int nonterminal) {
  const int count = static_cast<int>(nodes_.size());
  if (left < 0 || right < 0 || left >= count || right >= count)
    throw StructuralError("child index out of range");
  const TreeNode &l = nodes_[static_cast<std::size_t>(left)];
  const TreeNode &r = nodes_[static_cast<std::size_t>(right)];
  if (l.end != r.start) throw StructuralError("children spans are not adjacent");
  TreeNode node;
  node.start = l.start;
  node.end = r.end;
  node.split = l.end;
  node.left = left;
  node.right = right;
  node.symbol = nonterminal;
  nodes_.push_back(node);
  return count;
}

void ParseTree::set_root(int node) {
  if (node < 0 || node >= static_cast<int>(nodes_.size())) throw StructuralError("root index out of range");
  root_ = node;
  length_ = nodes_[static_cast<std::size_t>(node)].end;
}

void ParseTree::validate() const {
  if (root_ < 0) throw StructuralError("tree has no root");
  const TreeNode &r = node(root_);
  if (r.start != 0 || r.end != length_ || length_ < 1) throw StructuralError("root span must be (0, n)");
  std::vector<int> covered(static_cast<std::size_t>(length_), 0);
  int internal = 0;
  std::function<void(int)> walk = [&](int i) {
    const TreeNode &nd = node(i);
    if (nd.is_leaf()) {
      if (nd.end != nd.start + 1) throw StructuralError("leaf must span one token");
      ++covered[static_cast<std::size_t>(nd.start)];
      return;
    }
    ++internal;
    const TreeNode &l = node(nd.left);
    const TreeNode &rt = node(nd.right);
    if (!(nd.start < nd.split && nd.split < nd.end) || l.start != nd.start || l.end != nd.split ||
        rt.start != nd.split || rt.end != nd.end)
      throw StructuralError("children do not tile parent span");
    walk(nd.left);
    walk(nd.right);
  };
  walk(root_);
  for (int c : covered)
    if (c != 1) throw StructuralError("tree leaves do not cover every position exactly once");
  if (internal != length_ - 1) throw StructuralError("binary tree must have n-1 internal nodes");
}

ParseTree ParseTree::single_leaf(int preterminal) {
  ParseTree t;
  t.set_root(t.add_leaf(0, preterminal));
  return t;
}

ParseTree ParseTree::right_branching(int n) {
  if (n < 1) throw DegenerateInputError("tree length must be >= 1");
  ParseTree t;
  int node = t.add_leaf(n - 1);
  for (int i = n - 2; i >= 0; --i) node = t.add_internal(t.add_leaf(i), node);
  t.set_root(node);
  return t;
}

ParseTree ParseTree::left_branching(int n) {
  if (n < 1) throw DegenerateInputError("tree length must be >= 1");
  ParseTree t;
  int node = t.add_leaf(0);
  for (int i = 1; i < n; ++i) node = t.add_internal(node, t.add_leaf(i));
  t.set_root(node);
  return t;
}

ParseTree ParseTree::from_spans(int n, const std::set<Span> &spans) {
  if (n < 1) throw DegenerateInputError("tree length must be >= 1");
  ParseTree t;
  std::function<int(int, int)> build = [&](int i, int j) -> int {
    if (j - i == 1) return t.add_leaf(i);
    // The right child of (i, j) is the largest proper span starting after i
    // that ends at j; equivalently the left child is the longest one starting at i.
    for (int k = j - 1; k > i; --k) {
      const bool left_ok = (k - i == 1) || spans.count({i, k}) > 0;
      const bool right_ok = (j - k == 1) || spans.count({k, j}) > 0;
      if (left_ok && right_ok) {
        const int l = build(i, k);
        const int r = build(k, j);
        return t.add_internal(l, r);
      }
    }
    throw StructuralError("span set does not form a binary tree over (" + std::to_string(i) + ", " +
                          std::to_string(j) + ")");
  };
  t.set_root(build(0, n));
  t.validate();
  return t;
}

bool ParseTree::operator==(const ParseTree &other) const {
  if (length_ != other.length_) return false;
  if (root_ < 0 || other.root_ < 0) return root_ == other.root_;
  std::function<bool(int, int)> eq = [&](int a, int b) -> bool {
    const TreeNode &x = node(a);
    const TreeNode &y = other.node(b);
    if (x.start != y.start || x.end != y.end || x.split != y.split || x.symbol != y.symbol) return false;
    if (x.is_leaf()) return true;
    return eq(x.left, y.left) && eq(x.right, y.right);
  };
  return eq(root_, other.root_);
}

SpanSet tree_to_spans(const ParseTree &tree, SpanPolicy policy) {
  SpanSet out;
  const int n = tree.length();
  for (const TreeNode &nd : tree.nodes()) {
    if (policy == SpanPolicy::kExcludeTrivial && (nd.end - nd.start < 2 || (nd.start == 0 && nd.end == n))) continue;
    out.spans.insert({nd.start, nd.end});
  }
  return out;
}

std::optional<Sample> sample_sentence(const RuleTable &table, int max_length, std::uint64_t seed,
                                      const std::vector<std::string> *words) {
  const ValidationReport check = validate_grammar(table, TableMode::kNormalized);
  if (!check.passed) throw StructuralError("sample_sentence requires a normalized table: " + check.failure);
  const GrammarShape &g = table.shape();
  Rng rng(seed);

  auto draw = [&](std::span<const double> logp) {
    std::vector<double> w(logp.size());
    for (std::size_t i = 0; i < logp.size(); ++i) w[i] = std::exp(logp[i]);
    return static_cast<int>(rng.categorical(w));
  };

  Sample out;
  ParseTree &tree = out.tree;
  std::vector<int> &tokens = out.sentence.tokens;
  bool overflow = false;

  // Expands the combined symbol; returns the node index.
  std::function<int(int)> expand = [&](int symbol) -> int {
    if (overflow) return -1;
    if (!g.is_nonterminal(symbol)) {
      const int t = symbol - g.num_nonterminals;
      const int w = draw(table.preterm_row(t));
      const int pos = static_cast<int>(tokens.size());
      if (pos >= max_length) {
        overflow = true;
        return -1;
      }
      tokens.push_back(w);
      return tree.add_leaf(pos, t);
    }
    const int s = g.num_symbols();
    const int pair = draw(table.binary_row(symbol));
    const int left = expand(pair / s);
    if (overflow) return -1;
    const int right = expand(pair % s);
    if (overflow) return -1;
    return tree.add_internal(left, right, symbol);
  };

  const int root_symbol = draw(table.start_logp());
  const int root = expand(root_symbol);
  if (overflow) return std::nullopt;
  tree.set_root(root);
  for (int w : tokens) {
    if (words != nullptr && w < static_cast<int>(words->size()))
      out.sentence.raw_tokens.push_back((*words)[static_cast<std::size_t>(w)]);
    else
      out.sentence.raw_tokens.push_back("w" + std::to_string(w));
  }
  return out;
}

double tree_log_prob(const RuleTable &table, const ParseTree &tree, std::span<const int> tokens) {
  const GrammarShape &g = table.shape();
  if (static_cast<int>(tokens.size()) != tree.length()) throw StructuralError("token count differs from tree length");
  auto combined = [&](const TreeNode &nd) {
    if (nd.symbol < 0) throw StructuralError("tree_log_prob needs fully labelled trees");
    return nd.is_leaf() ? g.num_nonterminals + nd.symbol : nd.symbol;
  };
  const TreeNode &root = tree.node(tree.root());
  if (root.is_leaf()) throw DegenerateInputError("single-leaf trees have no start rule");
  double lp = table.start(root.symbol);
  for (const TreeNode &nd : tree.nodes()) {
    if (nd.is_leaf()) {
      lp += table.preterm(nd.symbol, tokens[static_cast<std::size_t>(nd.start)]);
    } else {
      lp += table.binary(nd.symbol, combined(tree.node(nd.left)), combined(tree.node(nd.right)));
    }
  }
  return lp;
}

std::string to_bracketed(const ParseTree &tree, std::span<const std::string> words) {
  if (static_cast<int>(words.size()) != tree.length()) throw StructuralError("word count differs from tree length");
  std::function<void(int, std::string &)> emit = [&](int i, std::string &out) {
    const TreeNode &nd = tree.node(i);
    if (nd.is_leaf()) {
      out += nd.symbol >= 0 ? "(T" + std::to_string(nd.symbol) : std::string("(T");
      out += ' ';
      out += words[static_cast<std::size_t>(nd.start)];
      out += ')';
      return;
    }
    out += nd.symbol >= 0 ? "(A" + std::to_string(nd.symbol) : std::string("(X");
    out += ' ';
    emit(nd.left, out);
    out += ' ';
    emit(nd.right, out);
    out += ')';
  };
  std::string out;
  emit(tree.root(), out);
  return out;
}

namespace {

int symbol_from_label(const std::string &label, char prefix) {
  if (label.size() < 2 || label[0] != prefix) return -1;
  int v = 0;
  for (std::size_t i = 1; i < label.size(); ++i) {
    if (label[i] < '0' || label[i] > '9') return -1;
    v = v * 10 + (label[i] - '0');
  }
  return v;
}

}  // namespace

BracketedBinary parse_binary_bracketed(const std::string &text) {
  const auto trees = parse_sexpressions(text);
  if (trees.size() != 1) throw DataError("expected exactly one bracketed tree");
  BracketedBinary out;
  std::function<int(const LabeledTree &)> build = [&](const LabeledTree &node) -> int {
    if (node.is_preterminal()) {
      const int pos = static_cast<int>(out.words.size());
      out.words.push_back(node.children[0].label);
      return out.tree.add_leaf(pos, symbol_from_label(node.label, 'T'));
    }
    if (node.children.size() != 2) throw DataError("binary tree node '" + node.label + "' must have two children");
    const int l = build(node.children[0]);
    const int r = build(node.children[1]);
    return out.tree.add_internal(l, r, symbol_from_label(node.label, 'A'));
  };
  out.tree.set_root(build(trees[0]));
  out.tree.validate();
  return out;
}

}  // namespace pcfg
