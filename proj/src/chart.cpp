#include "pcfg/chart.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "pcfg/errors.hpp"

namespace pcfg {

namespace {

// Forward-mode scalar: value and derivative along one direction.
struct Dual {
  double v = 0.0;
  double d = 0.0;
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator*(double s, Dual a) { return {s * a.v, s * a.d}; }
inline Dual &operator+=(Dual &a, Dual b) { return a = a + b; }
inline Dual operator+(Dual a, double c) { return {a.v + c, a.d}; }
inline Dual operator-(Dual a, double c) { return {a.v - c, a.d}; }

inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  if (e == 0.0) return {0.0, 0.0};
  return {e, e * a.d};
}
inline Dual log(Dual a) {
  if (a.v <= 0.0) return {kNegInf, 0.0};
  return {std::log(a.v), a.d / a.v};
}

inline double value(double x) { return x; }
inline double value(Dual x) { return x.v; }
inline double slope(Dual x) { return x.d; }

inline double exp(double x) { return std::exp(x); }
inline double log(double x) { return x <= 0.0 ? kNegInf : std::log(x); }

template <typename T>
T constant(double x) {
  if constexpr (std::is_same_v<T, double>)
    return x;
  else
    return T{x, 0.0};
}

template <typename T>
T log_add(T a, T b) {
  const double m = std::max(value(a), value(b));
  if (m == kNegInf) return constant<T>(kNegInf);
  return log(exp(a - m) + exp(b - m)) + m;
}

// Shared inside/outside/count engine. The binary rules are handled in
// probability space with per-row and per-cell max shifts, so the inner loops
// are multiply-adds instead of exp/log pairs.
template <typename T>
class ChartEngine {
 public:
  ChartEngine(const RuleTable &table, const Sentence &sentence, const SpanTable *bonus_slope)
      : table_(table), g_(table.shape()), tokens_(sentence.tokens), bonus_slope_(bonus_slope) {
    n_ = static_cast<int>(tokens_.size());
    nt_ = g_.num_nonterminals;
    s_ = g_.num_symbols();
    if (n_ < 2) throw DegenerateInputError("chart computations need at least two tokens");
    for (int w : tokens_)
      if (w < 0 || w >= g_.vocab_size)
        throw StructuralError("token index " + std::to_string(w) + " outside vocabulary of size " +
                              std::to_string(g_.vocab_size));
    if (bonus_slope_ != nullptr && bonus_slope_->length() != n_)
      throw StructuralError("span weight table length differs from sentence length");

    const std::size_t ss = static_cast<std::size_t>(s_) * static_cast<std::size_t>(s_);
    rowmax_.assign(static_cast<std::size_t>(nt_), kNegInf);
    pexp_.assign(static_cast<std::size_t>(nt_) * ss, 0.0);
    for (int a = 0; a < nt_; ++a) {
      const auto row = table.binary_row(a);
      double m = kNegInf;
      for (double x : row) m = std::max(m, x);
      rowmax_[static_cast<std::size_t>(a)] = m;
      if (m == kNegInf) continue;
      for (std::size_t r = 0; r < ss; ++r) pexp_[static_cast<std::size_t>(a) * ss + r] = std::exp(row[r] - m);
    }
    const std::size_t cells = static_cast<std::size_t>(n_ + 1) * static_cast<std::size_t>(n_ + 1) *
                              static_cast<std::size_t>(s_);
    beta_.assign(cells, constant<T>(kNegInf));
  }

  int length() const { return n_; }

  T &beta(int i, int j, int s) { return beta_[cell(i, j, s)]; }
  T &alpha(int i, int j, int s) { return alpha_[cell(i, j, s)]; }
  T log_marginal() const { return log_z_; }
  void set_log_marginal(T z) { log_z_ = z; }
  void reset_alpha() { alpha_.assign(beta_.size(), constant<T>(kNegInf)); }

  void run_inside() {
    for (int i = 0; i < n_; ++i)
      for (int t = 0; t < g_.num_preterminals; ++t)
        beta(i, i + 1, nt_ + t) = constant<T>(table_.preterm(t, tokens_[static_cast<std::size_t>(i)]));

    std::vector<T> sums;
    for (int w = 2; w <= n_; ++w) {
      for (int i = 0; i + w <= n_; ++i) {
        const int j = i + w;
        const double m = split_sums(i, j, sums);
        if (m == kNegInf) continue;
        const T bonus = span_bonus(i, j);
        for (int a = 0; a < nt_; ++a) {
          const double rm = rowmax_[static_cast<std::size_t>(a)];
          if (rm == kNegInf) continue;
          const T acc = contract_row(a, sums);
          beta(i, j, a) = log(acc) + (m + rm) + bonus;
        }
      }
    }
    double m = kNegInf;
    for (int a = 0; a < nt_; ++a) m = std::max(m, table_.start(a) + value(beta(0, n_, a)));
    if (m == kNegInf) {
      log_z_ = constant<T>(kNegInf);
      return;
    }
    T acc = constant<T>(0.0);
    for (int a = 0; a < nt_; ++a) acc += exp(beta(0, n_, a) + (table_.start(a) - m));
    log_z_ = log(acc) + m;
  }

  void run_outside() {
    alpha_.assign(beta_.size(), constant<T>(kNegInf));
    for (int a = 0; a < nt_; ++a) alpha(0, n_, a) = constant<T>(table_.start(a));

    const std::size_t ss = static_cast<std::size_t>(s_) * static_cast<std::size_t>(s_);
    std::vector<T> parent(ss);
    std::vector<T> left_w(static_cast<std::size_t>(s_)), right_w(static_cast<std::size_t>(s_));
    for (int w = n_; w >= 2; --w) {
      for (int i = 0; i + w <= n_; ++i) {
        const int j = i + w;
        const T bonus = span_bonus(i, j);
        double ma = kNegInf;
        for (int a = 0; a < nt_; ++a)
          ma = std::max(ma, value(alpha(i, j, a)) + rowmax_[static_cast<std::size_t>(a)]);
        if (ma == kNegInf) continue;
        // parent[B,C] = sum_A exp(alpha_A + bonus + rowmax_A - ma) * pexp[A,B,C]
        std::fill(parent.begin(), parent.end(), constant<T>(0.0));
        for (int a = 0; a < nt_; ++a) {
          const double rm = rowmax_[static_cast<std::size_t>(a)];
          if (rm == kNegInf) continue;
          const T q = exp(alpha(i, j, a) + bonus + (rm - ma));
          if (value(q) == 0.0) continue;
          const double *p = &pexp_[static_cast<std::size_t>(a) * ss];
          for (std::size_t r = 0; r < ss; ++r)
            if (p[r] != 0.0) parent[r] += p[r] * q;
        }
        for (int k = i + 1; k < j; ++k) {
          const auto [lb, le] = symbol_range(k - i);
          const auto [rb, re] = symbol_range(j - k);
          const double ml = cell_max(i, k, lb, le);
          const double mr = cell_max(k, j, rb, re);
          for (int b = lb; b < le; ++b) left_w[static_cast<std::size_t>(b)] = shifted(i, k, b, ml);
          for (int c = rb; c < re; ++c) right_w[static_cast<std::size_t>(c)] = shifted(k, j, c, mr);
          // Left child B: sum_C parent[B,C] * right_w[C].
          if (mr != kNegInf) {
            for (int b = lb; b < le; ++b) {
              T acc = constant<T>(0.0);
              const T *row = &parent[static_cast<std::size_t>(b) * static_cast<std::size_t>(s_)];
              for (int c = rb; c < re; ++c) acc += row[c] * right_w[static_cast<std::size_t>(c)];
              if (value(acc) == 0.0) continue;
              alpha(i, k, b) = log_add(alpha(i, k, b), log(acc) + (ma + mr));
            }
          }
          if (ml != kNegInf) {
            for (int c = rb; c < re; ++c) {
              T acc = constant<T>(0.0);
              for (int b = lb; b < le; ++b)
                acc += parent[static_cast<std::size_t>(b) * static_cast<std::size_t>(s_) +
                              static_cast<std::size_t>(c)] *
                       left_w[static_cast<std::size_t>(b)];
              if (value(acc) == 0.0) continue;
              alpha(k, j, c) = log_add(alpha(k, j, c), log(acc) + (ma + ml));
            }
          }
        }
      }
    }
  }

  // Fills `counts` (and their slopes for Dual) and the span posteriors.
  void run_counts(std::vector<T> &start, std::vector<T> &binary, std::vector<T> &preterm,
                  std::vector<T> &span_post) {
    const std::size_t ss = static_cast<std::size_t>(s_) * static_cast<std::size_t>(s_);
    start.assign(static_cast<std::size_t>(nt_), constant<T>(0.0));
    binary.assign(static_cast<std::size_t>(nt_) * ss, constant<T>(0.0));
    preterm.assign(static_cast<std::size_t>(g_.num_preterminals) * static_cast<std::size_t>(g_.vocab_size),
                   constant<T>(0.0));
    span_post.assign(static_cast<std::size_t>(n_ + 1) * static_cast<std::size_t>(n_ + 1), constant<T>(0.0));
    const T z = log_z_;

    for (int a = 0; a < nt_; ++a)
      start[static_cast<std::size_t>(a)] = exp(beta(0, n_, a) + table_.start(a) - z);

    for (int i = 0; i < n_; ++i) {
      const int word = tokens_[static_cast<std::size_t>(i)];
      for (int t = 0; t < g_.num_preterminals; ++t)
        preterm[table_.preterm_index(t, word)] += exp(alpha(i, i + 1, nt_ + t) + beta(i, i + 1, nt_ + t) - z);
    }

    std::vector<T> sums;
    for (int w = 2; w <= n_; ++w) {
      for (int i = 0; i + w <= n_; ++i) {
        const int j = i + w;
        T post = constant<T>(0.0);
        for (int a = 0; a < nt_; ++a) post += exp(alpha(i, j, a) + beta(i, j, a) - z);
        span_post[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_ + 1) + static_cast<std::size_t>(j)] =
            post;

        const double m = split_sums(i, j, sums);
        if (m == kNegInf) continue;
        const T bonus = span_bonus(i, j);
        for (int a = 0; a < nt_; ++a) {
          const double rm = rowmax_[static_cast<std::size_t>(a)];
          if (rm == kNegInf) continue;
          const T coef = exp(alpha(i, j, a) + bonus + (rm + m) - z);
          if (value(coef) == 0.0) continue;
          const double *p = &pexp_[static_cast<std::size_t>(a) * ss];
          T *out = &binary[static_cast<std::size_t>(a) * ss];
          for (std::size_t r = 0; r < ss; ++r)
            if (p[r] != 0.0 && value(sums[r]) != 0.0) out[r] += (p[r] * coef) * sums[r];
        }
      }
    }
  }

 private:
  std::size_t cell(int i, int j, int s) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(n_ + 1) + static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(s_) +
           static_cast<std::size_t>(s);
  }

  // Width-1 cells hold preterminals only; wider cells hold nonterminals only.
  std::pair<int, int> symbol_range(int width) const {
    return width == 1 ? std::pair<int, int>{nt_, s_} : std::pair<int, int>{0, nt_};
  }

  T span_bonus(int i, int j) const {
    if constexpr (std::is_same_v<T, double>) {
      return 0.0;
    } else {
      return T{0.0, bonus_slope_ == nullptr ? 0.0 : bonus_slope_->at(i, j)};
    }
  }

  double cell_max(int i, int j, int b, int e) {
    double m = kNegInf;
    for (int s = b; s < e; ++s) m = std::max(m, value(beta(i, j, s)));
    return m;
  }

  T shifted(int i, int j, int s, double m) {
    if (m == kNegInf) return constant<T>(0.0);
    return exp(beta(i, j, s) - m);
  }

  // sums[B,C] = sum_k exp(beta(i,k,B) + beta(k,j,C) - M); returns M.
  double split_sums(int i, int j, std::vector<T> &sums) {
    const std::size_t ss = static_cast<std::size_t>(s_) * static_cast<std::size_t>(s_);
    sums.assign(ss, constant<T>(0.0));
    double big = kNegInf;
    for (int k = i + 1; k < j; ++k) {
      const auto [lb, le] = symbol_range(k - i);
      const auto [rb, re] = symbol_range(j - k);
      big = std::max(big, cell_max(i, k, lb, le) + cell_max(k, j, rb, re));
    }
    if (big == kNegInf) return kNegInf;
    std::vector<T> right(static_cast<std::size_t>(s_));
    for (int k = i + 1; k < j; ++k) {
      const auto [lb, le] = symbol_range(k - i);
      const auto [rb, re] = symbol_range(j - k);
      const double ml = cell_max(i, k, lb, le);
      const double mr = cell_max(k, j, rb, re);
      if (ml == kNegInf || mr == kNegInf) continue;
      const double scale = std::exp(ml + mr - big);
      if (scale == 0.0) continue;
      for (int c = rb; c < re; ++c) right[static_cast<std::size_t>(c)] = shifted(k, j, c, mr);
      for (int b = lb; b < le; ++b) {
        const T left = scale * shifted(i, k, b, ml);
        if (value(left) == 0.0) continue;
        T *row = &sums[static_cast<std::size_t>(b) * static_cast<std::size_t>(s_)];
        for (int c = rb; c < re; ++c) row[c] += left * right[static_cast<std::size_t>(c)];
      }
    }
    return big;
  }

  T contract_row(int a, const std::vector<T> &sums) const {
    const std::size_t ss = static_cast<std::size_t>(s_) * static_cast<std::size_t>(s_);
    const double *p = &pexp_[static_cast<std::size_t>(a) * ss];
    T acc = constant<T>(0.0);
    for (std::size_t r = 0; r < ss; ++r)
      if (p[r] != 0.0 && value(sums[r]) != 0.0) acc += p[r] * sums[r];
    return acc;
  }

  const RuleTable &table_;
  const GrammarShape &g_;
  const std::vector<int> &tokens_;
  const SpanTable *bonus_slope_;
  int n_ = 0;
  int nt_ = 0;
  int s_ = 0;
  std::vector<double> rowmax_;
  std::vector<double> pexp_;
  std::vector<T> beta_;
  std::vector<T> alpha_;
  T log_z_ = constant<T>(kNegInf);
};

void check_sentence(const RuleTable &table, const Sentence &sentence) {
  if (sentence.length() < 2) throw DegenerateInputError("chart computations need at least two tokens");
  for (int w : sentence.tokens)
    if (w < 0 || w >= table.shape().vocab_size)
      throw StructuralError("token index " + std::to_string(w) + " outside vocabulary");
}

void copy_into(std::span<double> dst, const std::vector<double> &src) { std::copy(src.begin(), src.end(), dst.begin()); }

}  // namespace

InsideChart inside(const RuleTable &table, const Sentence &sentence) {
  ChartEngine<double> engine(table, sentence, nullptr);
  engine.run_inside();
  const int n = engine.length();
  const int s = table.shape().num_symbols();
  InsideChart out{SpanChart(n, s, kNegInf), engine.log_marginal()};
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j <= n; ++j)
      for (int x = 0; x < s; ++x) out.beta.at(i, j, x) = engine.beta(i, j, x);
  return out;
}

namespace {

void load_charts(ChartEngine<double> &engine, const InsideChart &in, const OutsideChart *out, int s) {
  const int n = engine.length();
  if (in.beta.length() != n || in.beta.num_symbols() != s)
    throw StructuralError("inside chart does not match sentence/grammar");
  if (out != nullptr && (out->alpha.length() != n || out->alpha.num_symbols() != s))
    throw StructuralError("outside chart does not match sentence/grammar");
  if (out != nullptr) engine.reset_alpha();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j <= n; ++j)
      for (int x = 0; x < s; ++x) {
        engine.beta(i, j, x) = in.beta.at(i, j, x);
        if (out != nullptr) engine.alpha(i, j, x) = out->alpha.at(i, j, x);
      }
  engine.set_log_marginal(in.log_marginal);
}

}  // namespace

OutsideChart outside(const RuleTable &table, const Sentence &sentence, const InsideChart &in) {
  ChartEngine<double> engine(table, sentence, nullptr);
  const int s = table.shape().num_symbols();
  load_charts(engine, in, nullptr, s);
  engine.run_outside();
  const int n = engine.length();
  OutsideChart out{SpanChart(n, s, kNegInf)};
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j <= n; ++j)
      for (int x = 0; x < s; ++x) out.alpha.at(i, j, x) = engine.alpha(i, j, x);
  return out;
}

PosteriorTable span_posteriors(const InsideChart &in, const OutsideChart &out) {
  const int n = in.beta.length();
  if (out.alpha.length() != n || out.alpha.num_symbols() != in.beta.num_symbols())
    throw StructuralError("inside and outside charts disagree in shape");
  if (in.log_marginal == kNegInf) throw NoParseError("sentence has no parse under the grammar");
  PosteriorTable post{SpanTable(n, 0.0)};
  const int s = in.beta.num_symbols();
  std::vector<double> terms(static_cast<std::size_t>(s));
  for (int w = 2; w <= n; ++w)
    for (int i = 0; i + w <= n; ++i) {
      const int j = i + w;
      for (int x = 0; x < s; ++x) terms[static_cast<std::size_t>(x)] = out.alpha.at(i, j, x) + in.beta.at(i, j, x);
      post.span_post.at(i, j) = std::exp(logsumexp(terms) - in.log_marginal);
    }
  return post;
}

CountTable expected_rule_counts(const RuleTable &table, const Sentence &sentence, const InsideChart &in,
                                const OutsideChart &out) {
  if (in.log_marginal == kNegInf) throw NoParseError("sentence has no parse under the grammar");
  ChartEngine<double> engine(table, sentence, nullptr);
  load_charts(engine, in, &out, table.shape().num_symbols());
  std::vector<double> start, binary, preterm, post;
  engine.run_counts(start, binary, preterm, post);
  CountTable counts(table.shape(), 0.0);
  copy_into(counts.start_logp(), start);
  copy_into(counts.binary_logp(), binary);
  copy_into(counts.preterm_logp(), preterm);
  return counts;
}

DirectionalCounts expected_counts_directional(const RuleTable &table, const Sentence &sentence,
                                              const SpanTable &weights) {
  ChartEngine<Dual> engine(table, sentence, &weights);
  engine.run_inside();
  if (engine.log_marginal().v == kNegInf) throw NoParseError("sentence has no parse under the grammar");
  engine.run_outside();
  std::vector<Dual> start, binary, preterm, post;
  engine.run_counts(start, binary, preterm, post);

  DirectionalCounts out;
  out.log_marginal = engine.log_marginal().v;
  out.weighted_posterior = engine.log_marginal().d;
  out.counts = CountTable(table.shape(), 0.0);
  out.count_tangent = CountTable(table.shape(), 0.0);
  auto split = [](std::span<double> v, std::span<double> d, const std::vector<Dual> &src) {
    for (std::size_t i = 0; i < src.size(); ++i) {
      v[i] = src[i].v;
      d[i] = src[i].d;
    }
  };
  split(out.counts.start_logp(), out.count_tangent.start_logp(), start);
  split(out.counts.binary_logp(), out.count_tangent.binary_logp(), binary);
  split(out.counts.preterm_logp(), out.count_tangent.preterm_logp(), preterm);
  const int n = sentence.length();
  out.posteriors.span_post = SpanTable(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 2; j <= n; ++j)
      out.posteriors.span_post.at(i, j) =
          post[static_cast<std::size_t>(i) * static_cast<std::size_t>(n + 1) + static_cast<std::size_t>(j)].v;
  return out;
}

double mbr_objective(const PosteriorTable &posteriors, const ParseTree &tree) {
  if (tree.length() != posteriors.length()) throw StructuralError("tree and posterior lengths differ");
  double total = 0.0;
  for (const TreeNode &nd : tree.nodes())
    if (nd.end - nd.start >= 2) total += posteriors.span_post.at(nd.start, nd.end);
  return total;
}

ParseTree mbr_decode(const PosteriorTable &posteriors) {
  const int n = posteriors.length();
  if (n < 1) throw StructuralError("empty posterior table");
  if (n == 1) return ParseTree::single_leaf();
  SpanTable best(n, 0.0);
  std::vector<int> split(static_cast<std::size_t>(n + 1) * static_cast<std::size_t>(n + 1), -1);
  for (int w = 2; w <= n; ++w)
    for (int i = 0; i + w <= n; ++i) {
      const int j = i + w;
      double top = -std::numeric_limits<double>::infinity();
      int arg = -1;
      for (int k = i + 1; k < j; ++k) {
        const double v = best.at(i, k) + best.at(k, j);
        if (v > top) {
          top = v;
          arg = k;
        }
      }
      best.at(i, j) = posteriors.span_post.at(i, j) + top;
      split[static_cast<std::size_t>(i) * static_cast<std::size_t>(n + 1) + static_cast<std::size_t>(j)] = arg;
    }
  ParseTree tree;
  std::function<int(int, int)> build = [&](int i, int j) -> int {
    if (j - i == 1) return tree.add_leaf(i);
    const int k = split[static_cast<std::size_t>(i) * static_cast<std::size_t>(n + 1) + static_cast<std::size_t>(j)];
    const int l = build(i, k);
    const int r = build(k, j);
    return tree.add_internal(l, r);
  };
  tree.set_root(build(0, n));
  return tree;
}

ViterbiResult viterbi_decode(const RuleTable &table, const Sentence &sentence) {
  check_sentence(table, sentence);
  const GrammarShape &g = table.shape();
  const int n = sentence.length();
  const int nt = g.num_nonterminals;
  const int s = g.num_symbols();
  SpanChart best(n, s, kNegInf);
  struct Back {
    int split = -1;
    int left = -1;
    int right = -1;
  };
  std::vector<Back> back(best.data().size());
  auto back_at = [&](int i, int j, int x) -> Back & {
    return back[(static_cast<std::size_t>(i) * static_cast<std::size_t>(n + 1) + static_cast<std::size_t>(j)) *
                    static_cast<std::size_t>(s) +
                static_cast<std::size_t>(x)];
  };
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < g.num_preterminals; ++t)
      best.at(i, i + 1, nt + t) = table.preterm(t, sentence.tokens[static_cast<std::size_t>(i)]);

  auto range = [&](int width) { return width == 1 ? std::pair<int, int>{nt, s} : std::pair<int, int>{0, nt}; };
  for (int w = 2; w <= n; ++w)
    for (int i = 0; i + w <= n; ++i) {
      const int j = i + w;
      for (int a = 0; a < nt; ++a) {
        double top = kNegInf;
        Back arg;
        for (int k = i + 1; k < j; ++k) {
          const auto [lb, le] = range(k - i);
          const auto [rb, re] = range(j - k);
          for (int b = lb; b < le; ++b) {
            const double l = best.at(i, k, b);
            if (l == kNegInf) continue;
            for (int c = rb; c < re; ++c) {
              const double v = table.binary(a, b, c) + l + best.at(k, j, c);
              if (v > top) {
                top = v;
                arg = {k, b, c};
              }
            }
          }
        }
        best.at(i, j, a) = top;
        back_at(i, j, a) = arg;
      }
    }
  double top = kNegInf;
  int root = -1;
  for (int a = 0; a < nt; ++a) {
    const double v = table.start(a) + best.at(0, n, a);
    if (v > top) {
      top = v;
      root = a;
    }
  }
  if (root < 0) throw NoParseError("sentence has no parse under the grammar");

  ViterbiResult result;
  result.log_prob = top;
  std::function<int(int, int, int)> build = [&](int i, int j, int x) -> int {
    if (j - i == 1) return result.tree.add_leaf(i, x - nt);
    const Back &bk = back_at(i, j, x);
    const int l = build(i, bk.split, bk.left);
    const int r = build(bk.split, j, bk.right);
    return result.tree.add_internal(l, r, x);
  };
  result.tree.set_root(build(0, n, root));
  return result;
}

std::vector<ParseTree> enumerate_bracketings(int n) {
  if (n < 1) throw DegenerateInputError("bracketings need n >= 1");
  // Each bracketing is a list of (start, end) spans; rebuilt into trees at the end.
  std::function<std::vector<std::vector<Span>>(int, int)> all = [&](int i, int j) {
    std::vector<std::vector<Span>> out;
    if (j - i == 1) {
      out.push_back({});
      return out;
    }
    for (int k = i + 1; k < j; ++k) {
      const auto lefts = all(i, k);
      const auto rights = all(k, j);
      for (const auto &l : lefts)
        for (const auto &r : rights) {
          std::vector<Span> v{{i, j}};
          v.insert(v.end(), l.begin(), l.end());
          v.insert(v.end(), r.begin(), r.end());
          out.push_back(std::move(v));
        }
    }
    return out;
  };
  std::vector<ParseTree> trees;
  for (const auto &spans : all(0, n)) trees.push_back(ParseTree::from_spans(n, std::set<Span>(spans.begin(), spans.end())));
  return trees;
}

namespace {

// Scores one bracketing by enumerating every nonterminal assignment of its
// internal nodes. Leaf preterminals only interact with their parent's rule,
// so they are summed (or maximised) locally per assignment.
struct LabelEnumeration {
  double log_sum = kNegInf;
  double best = kNegInf;
  std::vector<int> best_internal;  // nonterminal per internal node (in internal order)
  std::vector<int> best_leaf;      // preterminal per position
};

LabelEnumeration enumerate_labels(const RuleTable &table, const ParseTree &tree, std::span<const int> tokens) {
  const GrammarShape &g = table.shape();
  const int nt = g.num_nonterminals;
  const int np = g.num_preterminals;
  std::vector<int> internal;
  std::vector<int> slot(tree.nodes().size(), -1);
  for (int i = 0; i < static_cast<int>(tree.nodes().size()); ++i)
    if (!tree.node(i).is_leaf()) {
      slot[static_cast<std::size_t>(i)] = static_cast<int>(internal.size());
      internal.push_back(i);
    }
  const std::size_t m = internal.size();
  std::vector<int> label(m, 0);
  LabelEnumeration out;
  std::vector<double> terms;
  for (;;) {
    // One labelling of the internal nodes.
    double lp = table.start(label[static_cast<std::size_t>(slot[static_cast<std::size_t>(tree.root())])]);
    double lp_max = lp;
    std::vector<int> leaf_choice(static_cast<std::size_t>(tree.length()), -1);
    for (std::size_t q = 0; q < m && lp > kNegInf; ++q) {
      const TreeNode &nd = tree.node(internal[q]);
      const int a = label[q];
      const TreeNode &l = tree.node(nd.left);
      const TreeNode &r = tree.node(nd.right);
      const std::vector<int> lset = l.is_leaf() ? std::vector<int>{} : std::vector<int>{label[static_cast<std::size_t>(slot[static_cast<std::size_t>(nd.left)])]};
      const std::vector<int> rset = r.is_leaf() ? std::vector<int>{} : std::vector<int>{label[static_cast<std::size_t>(slot[static_cast<std::size_t>(nd.right)])]};
      terms.clear();
      double local_best = kNegInf;
      int best_b = -1, best_c = -1;
      const int lcount = l.is_leaf() ? np : 1;
      const int rcount = r.is_leaf() ? np : 1;
      for (int bi = 0; bi < lcount; ++bi)
        for (int ci = 0; ci < rcount; ++ci) {
          const int b = l.is_leaf() ? nt + bi : lset[0];
          const int c = r.is_leaf() ? nt + ci : rset[0];
          double v = table.binary(a, b, c);
          if (l.is_leaf()) v += table.preterm(bi, tokens[static_cast<std::size_t>(l.start)]);
          if (r.is_leaf()) v += table.preterm(ci, tokens[static_cast<std::size_t>(r.start)]);
          terms.push_back(v);
          if (v > local_best) {
            local_best = v;
            best_b = bi;
            best_c = ci;
          }
        }
      lp += logsumexp(terms);
      lp_max += local_best;
      if (l.is_leaf()) leaf_choice[static_cast<std::size_t>(l.start)] = best_b;
      if (r.is_leaf()) leaf_choice[static_cast<std::size_t>(r.start)] = best_c;
    }
    if (lp > kNegInf) {
      out.log_sum = out.log_sum == kNegInf ? lp : std::max(out.log_sum, lp) + std::log1p(std::exp(-std::abs(out.log_sum - lp)));
    }
    if (lp_max > out.best) {
      out.best = lp_max;
      out.best_internal = label;
      out.best_leaf = leaf_choice;
    }
    // Next labelling in lexicographic order.
    std::size_t q = m;
    while (q > 0) {
      --q;
      if (++label[q] < nt) break;
      label[q] = 0;
      if (q == 0) return out;
    }
    if (m == 0) return out;
  }
}

void guard_size(const Sentence &sentence, int max_n) {
  if (sentence.length() < 2) throw DegenerateInputError("brute force needs at least two tokens");
  if (sentence.length() > max_n)
    throw DegenerateInputError("brute-force enumeration refused for n = " + std::to_string(sentence.length()) +
                               " > " + std::to_string(max_n));
}

}  // namespace

std::vector<std::pair<ParseTree, double>> brute_force_bracketing_scores(const RuleTable &table,
                                                                        const Sentence &sentence, int max_n) {
  guard_size(sentence, max_n);
  check_sentence(table, sentence);
  std::vector<std::pair<ParseTree, double>> out;
  for (ParseTree &t : enumerate_bracketings(sentence.length())) {
    const double lp = enumerate_labels(table, t, sentence.tokens).log_sum;
    out.emplace_back(std::move(t), lp);
  }
  return out;
}

double brute_force_marginal(const RuleTable &table, const Sentence &sentence, int max_n) {
  std::vector<double> scores;
  for (const auto &[tree, lp] : brute_force_bracketing_scores(table, sentence, max_n)) scores.push_back(lp);
  return logsumexp(scores);
}

ViterbiResult brute_force_viterbi(const RuleTable &table, const Sentence &sentence, int max_n) {
  guard_size(sentence, max_n);
  check_sentence(table, sentence);
  ViterbiResult best;
  for (const ParseTree &t : enumerate_bracketings(sentence.length())) {
    const LabelEnumeration e = enumerate_labels(table, t, sentence.tokens);
    if (e.best > best.log_prob) {
      best.log_prob = e.best;
      // Relabel a copy of the bracketing with the winning assignment.
      ParseTree labelled;
      int q = 0;
      std::vector<int> slot_of(t.nodes().size(), -1);
      for (int i = 0; i < static_cast<int>(t.nodes().size()); ++i)
        if (!t.node(i).is_leaf()) slot_of[static_cast<std::size_t>(i)] = q++;
      std::function<int(int)> copy = [&](int i) -> int {
        const TreeNode &nd = t.node(i);
        if (nd.is_leaf()) return labelled.add_leaf(nd.start, e.best_leaf[static_cast<std::size_t>(nd.start)]);
        const int l = copy(nd.left);
        const int r = copy(nd.right);
        return labelled.add_internal(l, r, e.best_internal[static_cast<std::size_t>(slot_of[static_cast<std::size_t>(i)])]);
      };
      labelled.set_root(copy(t.root()));
      best.tree = std::move(labelled);
    }
  }
  if (best.log_prob == kNegInf) throw NoParseError("sentence has no parse under the grammar");
  return best;
}

}  // namespace pcfg
