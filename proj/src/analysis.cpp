#include "pcfg/analysis.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "pcfg/errors.hpp"
#include "pcfg/random.hpp"

namespace pcfg {

namespace {

void count_tree(const LabeledTree &t, const std::string &id, const Vocabulary *vocab, FactorInventory &inv) {
  if (t.terminal) return;
  if (t.children.empty()) throw DataError("malformed tree '" + id + "': node '" + t.label + "' has no children");
  auto map_word = [&](const std::string &w) { return vocab != nullptr ? vocab->word(vocab->index(w)) : w; };
  if (t.is_preterminal()) {
    const std::string w = map_word(t.children[0].label);
    ++inv.lexical_rules[t.label + " -> " + w];
    ++inv.words[w];
    return;
  }
  std::string sig = t.label + " ->";
  for (const auto &c : t.children) {
    if (c.terminal) throw DataError("malformed tree '" + id + "': bare word under phrase '" + t.label + "'");
    sig += " " + c.label;
  }
  ++inv.labels[t.label];
  ++inv.nonlexical_rules[sig];
  for (const auto &c : t.children) count_tree(c, id, vocab, inv);
}

OverlapRate coverage(const std::map<std::string, long> &train, const std::map<std::string, long> &test) {
  long types = 0, covered_types = 0, inst = 0, covered_inst = 0;
  for (const auto &[k, c] : test) {
    ++types;
    inst += c;
    if (train.count(k)) {
      ++covered_types;
      covered_inst += c;
    }
  }
  if (types == 0) return {};
  return {static_cast<double>(covered_types) / types, static_cast<double>(covered_inst) / inst};
}

std::map<std::string, long> merged(const std::map<std::string, long> &a, const std::map<std::string, long> &b) {
  std::map<std::string, long> out = a;
  for (const auto &[k, c] : b) out[k] += c;
  return out;
}

std::vector<double> average_ranks(const std::vector<double> &xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double two_sided_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

std::string fmt(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace

FactorInventory extract_factors(const std::vector<LabeledTree> &treebank, const std::vector<std::string> &ids,
                                const Vocabulary *vocab) {
  if (treebank.empty()) throw DegenerateInputError("cannot extract factors from an empty treebank");
  FactorInventory inv;
  for (std::size_t k = 0; k < treebank.size(); ++k)
    count_tree(treebank[k], k < ids.size() ? ids[k] : std::to_string(k), vocab, inv);
  return inv;
}

OverlapReport overlap_rates(const FactorInventory &train, const FactorInventory &test) {
  if (test.labels.empty() && test.words.empty() && test.lexical_rules.empty() && test.nonlexical_rules.empty())
    throw DegenerateInputError("test inventory is empty");
  OverlapReport r;
  r["labels"] = coverage(train.labels, test.labels);
  r["rules"] = coverage(merged(train.lexical_rules, train.nonlexical_rules),
                        merged(test.lexical_rules, test.nonlexical_rules));
  r["rules-lexical"] = coverage(train.lexical_rules, test.lexical_rules);
  r["rules-non-lexical"] = coverage(train.nonlexical_rules, test.nonlexical_rules);
  r["words"] = coverage(train.words, test.words);
  return r;
}

void write_overlap_csv(const std::string &path, const OverlapReport &report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "factor,level,rate\n";
  for (const char *f : {"labels", "rules", "rules-lexical", "rules-non-lexical", "words"}) {
    const auto it = report.find(f);
    if (it == report.end()) continue;
    out << f << ",type," << fmt(it->second.type_rate) << '\n';
    out << f << ",instance," << fmt(it->second.instance_rate) << '\n';
  }
}

ErrorBucketTable error_buckets(const std::vector<EvalRecord> &records, int bucket_width) {
  if (bucket_width < 1) throw ConfigError("bucket width must be >= 1");
  ErrorBucketTable table;
  table.bucket_width = bucket_width;
  if (records.empty()) return table;
  std::map<std::pair<int, int>, ErrorBucketRow> rows;
  for (const auto &r : records) {
    const int b = r.length / bucket_width;
    ErrorBucketRow &row = rows[{b, r.unk_count}];
    row.length_lo = b * bucket_width;
    row.length_hi = row.length_lo + bucket_width - 1;
    row.unk_count = r.unk_count;
    row.recognized += r.tp;
    row.unrecognized += r.fn;
    ++row.sentences;
  }
  for (auto &[key, row] : rows) {
    row.ratio = row.unrecognized == 0 ? std::numeric_limits<double>::infinity()
                                      : static_cast<double>(row.recognized) / static_cast<double>(row.unrecognized);
    table.rows.push_back(row);
  }
  return table;
}

void write_bucket_csv(const std::string &path, const ErrorBucketTable &table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "length_lo,length_hi,unk_count,recognized,unrecognized,ratio,sentences\n";
  for (const auto &r : table.rows)
    out << r.length_lo << ',' << r.length_hi << ',' << r.unk_count << ',' << r.recognized << ',' << r.unrecognized
        << ',' << fmt(r.ratio) << ',' << r.sentences << '\n';
}

CorrelationResult spearman(const std::vector<double> &xs, const std::vector<double> &ys) {
  if (xs.size() != ys.size()) throw DegenerateInputError("spearman inputs differ in length");
  if (xs.size() < 3) throw DegenerateInputError("spearman needs at least three points");
  const std::vector<double> rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < rx.size(); ++k) {
    sxy += (rx[k] - mx) * (ry[k] - my);
    sxx += (rx[k] - mx) * (rx[k] - mx);
    syy += (ry[k] - my) * (ry[k] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateTestError("correlation undefined for a constant series");
  CorrelationResult r;
  r.n = xs.size();
  r.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  if (std::abs(r.rho) >= 1.0) {
    r.p_value = 0.0;
  } else {
    const double t = r.rho * std::sqrt((n - 2.0) / (1.0 - r.rho * r.rho));
    r.p_value = two_sided_p(t, n - 2.0);
  }
  return r;
}

PairedTestResult paired_t_test(const std::vector<double> &a, const std::vector<double> &b) {
  if (a.size() != b.size()) throw DegenerateInputError("paired samples differ in length");
  if (a.size() < 2) throw DegenerateInputError("paired t-test needs at least two pairs");
  const double n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) d[k] = a[k] - b[k];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) throw DegenerateTestError("paired differences have zero variance");
  PairedTestResult r;
  r.n = a.size();
  r.mean_diff = mean;
  r.std_diff = sd;
  r.t_stat = mean / (sd / std::sqrt(n));
  r.p_value = two_sided_p(r.t_stat, n - 1.0);
  return r;
}

const char *to_string(SeedCondition c) {
  switch (c) {
    case SeedCondition::kRM: return "RM";
    case SeedCondition::kRMRD: return "RM+RD";
    case SeedCondition::kVRM: return "V-RM";
  }
  return "?";
}

SeedCondition parse_condition(const std::string &name) {
  if (name == "RM" || name == "rm") return SeedCondition::kRM;
  if (name == "RM+RD" || name == "rm+rd" || name == "RMRD" || name == "rmrd") return SeedCondition::kRMRD;
  if (name == "V-RM" || name == "v-rm" || name == "VRM" || name == "vrm") return SeedCondition::kVRM;
  throw ConfigError("unknown seed condition: " + name);
}

std::vector<SeedRun> seed_experiment_protocol(const ProtocolSettings &settings,
                                              const std::vector<SeedCondition> &conditions,
                                              const std::function<RunOutcome(const RunSpec &)> &train) {
  if (settings.num_seeds < 1) throw ConfigError("num_seeds must be >= 1");
  for (SeedCondition c : conditions)
    if (c == SeedCondition::kVRM && !settings.corpus_has_images)
      throw ConfigError("condition V-RM needs image-paired training data");
  std::vector<SeedRun> runs;
  for (SeedCondition c : conditions)
    for (int i = 0; i < settings.num_seeds; ++i) {
      RunSpec spec;
      spec.condition = c;
      spec.seed_index = i;
      spec.model_seed = derive_seed(settings.base_model_seed, static_cast<std::uint64_t>(i));
      spec.data_seed = c == SeedCondition::kRMRD
                           ? derive_seed(settings.base_data_seed, static_cast<std::uint64_t>(i) + 1)
                           : settings.base_data_seed;
      spec.grounded = c == SeedCondition::kVRM;
      runs.push_back({spec, train(spec)});
    }
  return runs;
}

std::vector<double> condition_scores(const std::vector<SeedRun> &runs, SeedCondition c) {
  std::vector<const SeedRun *> sel;
  for (const auto &r : runs)
    if (r.spec.condition == c) sel.push_back(&r);
  std::sort(sel.begin(), sel.end(), [](auto *a, auto *b) { return a->spec.seed_index < b->spec.seed_index; });
  std::vector<double> out;
  for (auto *r : sel) out.push_back(r->outcome.sentence_f1);
  return out;
}

void write_seed_table_csv(const std::string &path, const std::vector<SeedRun> &runs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "condition,seed_index,model_seed,data_seed,sentence_f1,corpus_f1\n";
  for (const auto &r : runs)
    out << to_string(r.spec.condition) << ',' << r.spec.seed_index << ',' << r.spec.model_seed << ','
        << r.spec.data_seed << ',' << fmt(r.outcome.sentence_f1) << ',' << fmt(r.outcome.corpus_f1) << '\n';
}

}  // namespace pcfg
