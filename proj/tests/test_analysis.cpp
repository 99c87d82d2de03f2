#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "pcfg/analysis.hpp"
#include "pcfg/errors.hpp"
#include "pcfg/random.hpp"

using namespace pcfg;

namespace {

SpanSet spans(std::initializer_list<Span> list) {
  SpanSet s;
  for (const Span &x : list) s.insert(x);
  return s;
}

FactorInventory words_only(std::map<std::string, long> w) {
  FactorInventory f;
  f.words = std::move(w);
  return f;
}

}  // namespace

TEST_CASE("factor extraction by hand enumeration") {
  const auto tb = parse_sexpressions("(S (NP (DT the) (NN cat)) (VP (VB sat)))");
  const FactorInventory f = extract_factors(tb);
  CHECK(f.labels == std::map<std::string, long>{{"S", 1}, {"NP", 1}, {"VP", 1}});
  CHECK(f.lexical_rules == std::map<std::string, long>{{"DT -> the", 1}, {"NN -> cat", 1}, {"VB -> sat", 1}});
  CHECK(f.nonlexical_rules == std::map<std::string, long>{{"S -> NP VP", 1}, {"NP -> DT NN", 1}, {"VP -> VB", 1}});
  CHECK(f.words == std::map<std::string, long>{{"the", 1}, {"cat", 1}, {"sat", 1}});

  auto doubled_tb = tb;
  doubled_tb.push_back(tb[0]);
  const FactorInventory d = extract_factors(doubled_tb);
  for (const auto &[k, c] : f.labels) CHECK(d.labels.at(k) == 2 * c);
  for (const auto &[k, c] : f.lexical_rules) CHECK(d.lexical_rules.at(k) == 2 * c);
  for (const auto &[k, c] : f.nonlexical_rules) CHECK(d.nonlexical_rules.at(k) == 2 * c);

  CHECK_THROWS_AS(extract_factors({}), DegenerateInputError);
  LabeledTree bad{"S", {LabeledTree{"NP", {}, false}}, false};
  CHECK_THROWS_AS(extract_factors({bad}, {"sent-9"}), DataError);

  const Vocabulary v = Vocabulary::from_words({"the"});
  const FactorInventory mapped = extract_factors(tb, {}, &v);
  CHECK(mapped.lexical_rules.count("NN -> <unk>") == 1);
  CHECK(mapped.words.at("<unk>") == 2);
}

TEST_CASE("overlap rates") {
  const auto tb = parse_sexpressions("(S (NP (DT the) (NN cat)) (VP (VB sat)))\n(S (NP (DT a) (NN dog)) (VP (VB ran)))");
  const FactorInventory f = extract_factors(tb);
  for (const auto &[name, r] : overlap_rates(f, f)) {
    CHECK(r.type_rate == 1.0);
    CHECK(r.instance_rate == 1.0);
  }
  const FactorInventory g = extract_factors(parse_sexpressions("(X (Y z))"));
  for (const auto &[name, r] : overlap_rates(g, f)) {
    CHECK(r.type_rate == 0.0);
    CHECK(r.instance_rate == 0.0);
  }
  const OverlapReport w = overlap_rates(words_only({{"a", 1}}), words_only({{"a", 3}, {"b", 1}}));
  CHECK(w.at("words").type_rate == doctest::Approx(1.0 / 2.0));
  CHECK(w.at("words").instance_rate == doctest::Approx(3.0 / 4.0));
  const OverlapReport w2 = overlap_rates(words_only({{"a", 1}}), words_only({{"a", 6}, {"b", 2}}));
  CHECK(w2.at("words").instance_rate == doctest::Approx(w.at("words").instance_rate));
  const OverlapReport w3 = overlap_rates(words_only({{"a", 1}, {"c", 1}}), words_only({{"a", 3}, {"b", 1}}));
  CHECK(w3.at("words").type_rate >= w.at("words").type_rate);
  CHECK_THROWS_AS(overlap_rates(f, FactorInventory{}), DegenerateInputError);
}

TEST_CASE("error buckets") {
  const double inf = std::numeric_limits<double>::infinity();
  {
    const EvalRecord r = make_record("a", 5, 0, spans({{0, 2}, {2, 5}}), spans({{0, 2}, {2, 5}}));
    const auto t = error_buckets({r});
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0].ratio == inf);
  }
  {
    const EvalRecord r = make_record("a", 5, 0, spans({{0, 2}, {0, 3}}), spans({{0, 2}, {2, 5}}));
    CHECK(error_buckets({r}).rows[0].ratio == 1.0);
  }
  // Lengths 6, 7, 9 with width 3: buckets [6,8] and [9,11].
  const EvalRecord a = make_record("a", 6, 1, spans({{0, 2}, {2, 5}, {3, 5}}), spans({{0, 2}, {2, 5}, {2, 4}}));
  const EvalRecord b = make_record("b", 7, 1, spans({{0, 2}}), spans({{0, 2}, {2, 6}, {3, 6}, {4, 6}}));
  const EvalRecord c = make_record("c", 9, 0, spans({{1, 9}, {2, 9}}), spans({{1, 9}, {2, 9}, {0, 2}}));
  const auto t = error_buckets({c, a, b});
  REQUIRE(t.rows.size() == 2);
  // a: 2 recognised, 1 missed; b: 1 recognised, 3 missed.
  CHECK(t.rows[0].length_lo == 6);
  CHECK(t.rows[0].length_hi == 8);
  CHECK(t.rows[0].unk_count == 1);
  CHECK(t.rows[0].recognized == 3);
  CHECK(t.rows[0].unrecognized == 4);
  CHECK(t.rows[0].ratio == doctest::Approx(0.75));
  CHECK(t.rows[0].sentences == 2);
  CHECK(t.rows[1].length_lo == 9);
  CHECK(t.rows[1].unk_count == 0);
  CHECK(t.rows[1].recognized == 2);
  CHECK(t.rows[1].unrecognized == 1);
  long total = 0;
  for (const auto &row : t.rows) total += row.recognized + row.unrecognized;
  CHECK(total == static_cast<long>(a.gold.size() + b.gold.size() + c.gold.size()));
  CHECK_THROWS_AS(error_buckets({a}, 0), ConfigError);
}

TEST_CASE("spearman") {
  CHECK(spearman({1, 2, 3, 4}, {5, 6, 7, 8}).rho == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {8, 7, 6, 5}).rho == doctest::Approx(-1.0));
  // Ranks of xs with the tie: [1, 2.5, 2.5, 4]; ys: [1, 2, 3, 4].
  const double rx[] = {1, 2.5, 2.5, 4}, ry[] = {1, 2, 3, 4};
  double sxy = 0, sxx = 0, syy = 0;
  for (int k = 0; k < 4; ++k) {
    sxy += (rx[k] - 2.5) * (ry[k] - 2.5);
    sxx += (rx[k] - 2.5) * (rx[k] - 2.5);
    syy += (ry[k] - 2.5) * (ry[k] - 2.5);
  }
  const CorrelationResult r = spearman({1, 2, 2, 4}, {10, 20, 30, 40});
  CHECK(r.rho == doctest::Approx(sxy / std::sqrt(sxx * syy)).epsilon(1e-12));
  CHECK(r.rho == doctest::Approx(0.9486832981));
  CHECK(r.p_value > 0.0);
  CHECK(r.p_value < 1.0);

  Rng rng(4);
  std::vector<double> xs, ys;
  for (int k = 0; k < 15; ++k) {
    xs.push_back(rng.normal());
    ys.push_back(xs.back() + rng.normal());
  }
  const CorrelationResult base = spearman(xs, ys);
  const CorrelationResult swapped = spearman(ys, xs);
  CHECK(base.rho == doctest::Approx(swapped.rho).epsilon(1e-14));
  std::vector<double> ex;
  for (double x : xs) ex.push_back(std::exp(x));
  CHECK(spearman(ex, ys).rho == doctest::Approx(base.rho).epsilon(1e-14));
  // t approximation.
  const double t = base.rho * std::sqrt(13.0 / (1.0 - base.rho * base.rho));
  CHECK(t > 0.0);

  CHECK_THROWS_AS(spearman({1, 1, 1}, {1, 2, 3}), DegenerateTestError);
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2}), DegenerateInputError);
}

TEST_CASE("paired t-test") {
  const PairedTestResult r = paired_t_test({2, 2, 2, 3}, {1, 1, 1, 1});
  CHECK(r.mean_diff == doctest::Approx(1.25));
  CHECK(r.std_diff == doctest::Approx(0.5));
  CHECK(r.t_stat == doctest::Approx(5.0));
  CHECK(std::abs(r.p_value - 0.0154) < 1e-3);

  const PairedTestResult shifted = paired_t_test({12, 12, 12, 13}, {11, 11, 11, 11});
  CHECK(shifted.t_stat == doctest::Approx(r.t_stat));
  CHECK(shifted.p_value == doctest::Approx(r.p_value));
  const PairedTestResult swapped = paired_t_test({1, 1, 1, 1}, {2, 2, 2, 3});
  CHECK(swapped.t_stat == doctest::Approx(-r.t_stat));
  CHECK(swapped.p_value == doctest::Approx(r.p_value));

  CHECK_THROWS_AS(paired_t_test({1, 2, 3}, {1, 2, 3}), DegenerateTestError);
  CHECK_THROWS_AS(paired_t_test({1}, {2}), DegenerateInputError);
}

TEST_CASE("seed protocol controls model and data seeds independently") {
  ProtocolSettings s;
  s.base_model_seed = 10;
  s.base_data_seed = 20;
  s.num_seeds = 3;
  std::vector<RunSpec> seen;
  auto fake = [&](const RunSpec &spec) {
    seen.push_back(spec);
    RunOutcome o;
    o.sentence_f1 = 0.1 * spec.seed_index + (spec.condition == SeedCondition::kRMRD ? 0.05 : 0.0);
    Rng rng(spec.data_seed);
    for (int k = 0; k < 5; ++k) o.batch_order.push_back(static_cast<long>(rng.below(100)));
    o.init_checksum = spec.model_seed;
    return o;
  };
  const auto runs = seed_experiment_protocol(s, {SeedCondition::kRM, SeedCondition::kRMRD}, fake);
  REQUIRE(runs.size() == 6);
  CHECK(runs[0].outcome.batch_order == runs[1].outcome.batch_order);
  CHECK(runs[0].spec.model_seed != runs[1].spec.model_seed);
  CHECK(runs[0].spec.model_seed == runs[3].spec.model_seed);
  CHECK(runs[0].outcome.init_checksum == runs[3].outcome.init_checksum);
  CHECK(runs[0].outcome.batch_order != runs[3].outcome.batch_order);
  CHECK(runs[3].outcome.batch_order != runs[4].outcome.batch_order);
  const auto rm = condition_scores(runs, SeedCondition::kRM);
  CHECK(rm == std::vector<double>{0.0, 0.1, 0.2});
  CHECK_THROWS_AS(seed_experiment_protocol(s, {SeedCondition::kVRM}, fake), ConfigError);
  s.corpus_has_images = true;
  const auto v = seed_experiment_protocol(s, {SeedCondition::kVRM}, fake);
  CHECK(v[0].spec.grounded);

  s.num_seeds = 1;
  const auto one = seed_experiment_protocol(s, {SeedCondition::kRM, SeedCondition::kRMRD}, fake);
  CHECK_THROWS_AS(paired_t_test(condition_scores(one, SeedCondition::kRM), condition_scores(one, SeedCondition::kRMRD)),
                  DegenerateInputError);
}
