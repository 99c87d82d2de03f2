#include "pcfg/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include "pcfg/errors.hpp"
#include "pcfg/random.hpp"

namespace pcfg {

namespace {

double ratio(long num, long den, double empty) { return den == 0 ? empty : static_cast<double>(num) / den; }

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

// Returns the end position.
int collect_spans(const LabeledTree &t, int start, SpanSet &out) {
  if (t.terminal) return start + 1;
  if (t.children.empty()) throw StructuralError("phrase '" + t.label + "' has no children");
  int pos = start;
  for (const auto &c : t.children) pos = collect_spans(c, pos, out);
  if (!t.is_preterminal()) out.insert({start, pos}, t.label);
  return pos;
}

}  // namespace

SpanSet filter_trivial(const SpanSet &spans, int n) {
  SpanSet out;
  for (const Span &s : spans.spans) {
    if (s.start < 0 || s.end > n || s.start >= s.end)
      throw StructuralError("span (" + std::to_string(s.start) + "," + std::to_string(s.end) +
                            ") outside a sentence of length " + std::to_string(n));
    if (s.end - s.start < 2 || (s.start == 0 && s.end == n)) continue;
    const auto lab = spans.labels.find(s);
    out.insert(s, lab == spans.labels.end() ? std::string() : lab->second);
  }
  return out;
}

SpanSet labeled_tree_spans(const LabeledTree &tree, SpanPolicy policy) {
  SpanSet all;
  const int n = collect_spans(tree, 0, all);
  return policy == SpanPolicy::kKeepAll ? all : filter_trivial(all, n);
}

F1Scores sentence_f1(const SpanSet &pred, const SpanSet &gold, int n) {
  return make_record("", n, 0, pred, gold).scores;
}

EvalRecord make_record(std::string id, int length, int unk_count, const SpanSet &pred, const SpanSet &gold) {
  EvalRecord r;
  r.id = std::move(id);
  r.length = length;
  r.unk_count = unk_count;
  r.pred = filter_trivial(pred, length);
  r.gold = filter_trivial(gold, length);
  for (const Span &s : r.pred.spans) (r.gold.contains(s) ? r.tp : r.fp) += 1;
  r.fn = static_cast<long>(r.gold.size()) - r.tp;
  if (r.pred.size() == 0 && r.gold.size() == 0) {
    r.scores = {1.0, 1.0, 1.0};
  } else {
    const double p = ratio(r.tp, r.tp + r.fp, 0.0);
    const double rc = ratio(r.tp, r.tp + r.fn, 0.0);
    r.scores = {p, rc, harmonic(p, rc)};
  }
  return r;
}

MetricsReport corpus_f1(const std::vector<EvalRecord> &records) {
  if (records.empty()) throw DegenerateInputError("no records to evaluate");
  MetricsReport m;
  std::map<int, double> f1_sums;
  for (const auto &r : records) {
    ++m.sentences;
    m.tp += r.tp;
    m.fp += r.fp;
    m.fn += r.fn;
    m.sentence_f1 += r.scores.f1;
    LengthStats &ls = m.by_length[r.length];
    ++ls.sentences;
    ls.tp += r.tp;
    ls.fp += r.fp;
    ls.fn += r.fn;
    f1_sums[r.length] += r.scores.f1;
  }
  m.sentence_f1 /= static_cast<double>(m.sentences);
  const bool none = m.tp + m.fp + m.fn == 0;
  m.corpus_precision = none ? 1.0 : ratio(m.tp, m.tp + m.fp, 0.0);
  m.corpus_recall = none ? 1.0 : ratio(m.tp, m.tp + m.fn, 0.0);
  m.corpus_f1 = none ? 1.0 : harmonic(m.corpus_precision, m.corpus_recall);
  for (auto &[len, ls] : m.by_length) {
    ls.sentence_f1 = f1_sums[len] / static_cast<double>(ls.sentences);
    const bool empty = ls.tp + ls.fp + ls.fn == 0;
    ls.corpus_f1 = empty ? 1.0 : harmonic(ratio(ls.tp, ls.tp + ls.fp, 0.0), ratio(ls.tp, ls.tp + ls.fn, 0.0));
  }
  return m;
}

ParseTree branching_baseline(int n, Branching direction) {
  if (n < 2) throw DegenerateInputError("branching baselines need at least two tokens");
  return direction == Branching::kRight ? ParseTree::right_branching(n) : ParseTree::left_branching(n);
}

std::vector<std::size_t> perm_assignment(const std::vector<int> &lengths, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t k = 0; k < lengths.size(); ++k) groups[lengths[k]].push_back(k);
  std::vector<std::size_t> src(lengths.size());
  for (auto &[len, members] : groups) {
    std::vector<std::size_t> shuffled = members;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(len)));
    rng.shuffle(shuffled);
    for (std::size_t k = 0; k < members.size(); ++k) src[members[k]] = shuffled[k];
  }
  return src;
}

nlohmann::json to_json(const SpanRecord &r) {
  nlohmann::json spans = nlohmann::json::array();
  nlohmann::json labels = nlohmann::json::array();
  bool labelled = false;
  for (const Span &s : r.spans.spans) {
    spans.push_back({s.start, s.end});
    const auto it = r.spans.labels.find(s);
    labels.push_back(it == r.spans.labels.end() ? "" : it->second);
    labelled = labelled || it != r.spans.labels.end();
  }
  nlohmann::json j = {{"id", r.id}, {"tokens", r.tokens}, {"length", r.length}, {"unk_count", r.unk_count},
                      {"spans", spans}};
  if (labelled) j["labels"] = labels;
  if (!r.tree.empty()) j["tree"] = r.tree;
  if (r.logp) j["logp"] = *r.logp;
  return j;
}

SpanRecord span_record_from_json(const nlohmann::json &j) {
  SpanRecord r;
  r.id = j.at("id").get<std::string>();
  r.tokens = j.value("tokens", std::vector<std::string>{});
  r.length = j.contains("length") ? j.at("length").get<int>() : static_cast<int>(r.tokens.size());
  r.unk_count = j.value("unk_count", 0);
  r.tree = j.value("tree", std::string());
  if (j.contains("logp") && !j.at("logp").is_null()) r.logp = j.at("logp").get<double>();
  const auto &spans = j.at("spans");
  const nlohmann::json labels = j.value("labels", nlohmann::json::array());
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const Span s{spans[k].at(0).get<int>(), spans[k].at(1).get<int>()};
    r.spans.insert(s, k < labels.size() ? labels[k].get<std::string>() : std::string());
  }
  return r;
}

void write_span_records(const std::string &path, const std::vector<SpanRecord> &records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto &r : records) out << to_json(r).dump() << '\n';
}

std::vector<SpanRecord> read_span_records(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<SpanRecord> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(span_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception &e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<EvalRecord> join_records(const std::vector<SpanRecord> &pred, const std::vector<SpanRecord> &gold) {
  std::unordered_map<std::string, const SpanRecord *> by_id;
  for (const auto &g : gold) by_id[g.id] = &g;
  std::vector<EvalRecord> out;
  out.reserve(pred.size());
  for (const auto &p : pred) {
    const auto it = by_id.find(p.id);
    if (it == by_id.end()) throw DataError("no gold entry for sentence id '" + p.id + "'");
    if (it->second->length != p.length)
      throw DataError("length mismatch for sentence id '" + p.id + "': predicted " + std::to_string(p.length) +
                      ", gold " + std::to_string(it->second->length));
    out.push_back(make_record(p.id, p.length, p.unk_count, p.spans, it->second->spans));
  }
  return out;
}

nlohmann::json to_json(const MetricsReport &m) {
  nlohmann::json by_length = nlohmann::json::object();
  for (const auto &[len, ls] : m.by_length)
    by_length[std::to_string(len)] = {{"sentences", ls.sentences}, {"sentence_f1", ls.sentence_f1},
                                      {"corpus_f1", ls.corpus_f1},  {"tp", ls.tp},
                                      {"fp", ls.fp},                {"fn", ls.fn}};
  return {{"sentences", m.sentences},
          {"corpus_precision", m.corpus_precision},
          {"corpus_recall", m.corpus_recall},
          {"corpus_f1", m.corpus_f1},
          {"sentence_f1", m.sentence_f1},
          {"tp", m.tp},
          {"fp", m.fp},
          {"fn", m.fn},
          {"by_length", by_length}};
}

void write_length_csv(const std::string &path, const MetricsReport &m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "length,sentences,sentence_f1,corpus_f1,tp,fp,fn\n";
  out.precision(10);
  for (const auto &[len, ls] : m.by_length)
    out << len << ',' << ls.sentences << ',' << ls.sentence_f1 << ',' << ls.corpus_f1 << ',' << ls.tp << ','
        << ls.fp << ',' << ls.fn << '\n';
}

}  // namespace pcfg
