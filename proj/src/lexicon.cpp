#include "pcfg/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "pcfg/errors.hpp"
#include "pcfg/random.hpp"

namespace pcfg {

std::string Vocabulary::normalize(const std::string &word) const {
  if (!lowercase_ || word == kUnkToken) return word;
  std::string out = word;
  for (char &c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void Vocabulary::add(const std::string &word, long count) {
  if (index_.count(word)) throw DataError("duplicate vocabulary entry: " + word);
  index_[word] = static_cast<int>(words_.size());
  words_.push_back(word);
  counts_.push_back(count);
}

Vocabulary Vocabulary::build(const TokenCorpus &corpus, int size_cap, bool lowercase) {
  if (size_cap < 0) throw ConfigError("vocabulary size cap must be non-negative");
  Vocabulary v;
  v.lowercase_ = lowercase;
  v.size_cap_ = size_cap;
  std::unordered_map<std::string, long> freq;
  long total = 0;
  for (const auto &sent : corpus)
    for (const auto &tok : sent) {
      ++freq[v.normalize(tok)];
      ++total;
    }
  if (total == 0) throw DegenerateInputError("cannot build a vocabulary from an empty corpus");
  long unk_count = 0;
  if (auto it = freq.find(kUnkToken); it != freq.end()) {
    unk_count = it->second;
    freq.erase(it);
  }
  std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto &a, const auto &b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const std::size_t keep = std::min(ranked.size(), static_cast<std::size_t>(size_cap));
  for (std::size_t k = 0; k < keep; ++k) v.add(ranked[k].first, ranked[k].second);
  for (std::size_t k = keep; k < ranked.size(); ++k) unk_count += ranked[k].second;
  v.unk_index_ = v.size();
  v.add(kUnkToken, unk_count);
  return v;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string> &words, bool lowercase) {
  Vocabulary v;
  v.lowercase_ = lowercase;
  for (const auto &w : words) {
    const std::string n = v.normalize(w);
    if (n == kUnkToken || v.index_.count(n)) continue;
    v.add(n, 0);
  }
  v.size_cap_ = v.size();
  v.unk_index_ = v.size();
  v.add(kUnkToken, 0);
  return v;
}

bool Vocabulary::contains(const std::string &word) const {
  const auto it = index_.find(normalize(word));
  return it != index_.end() && it->second != unk_index_;
}

int Vocabulary::index(const std::string &word) const {
  const auto it = index_.find(normalize(word));
  return it == index_.end() ? unk_index_ : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string> &tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto &t : tokens) out.push_back(index(t));
  return out;
}

void Vocabulary::write(const std::string &path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary: " + path);
  for (int i = 0; i < size(); ++i) out << words_[static_cast<std::size_t>(i)] << '\t' << i << '\t' << count(i) << '\n';
}

Vocabulary Vocabulary::read(const std::string &path, bool lowercase) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary: " + path);
  Vocabulary v;
  v.lowercase_ = lowercase;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream fields(line);
    std::string word, idx, cnt;
    if (!std::getline(fields, word, '\t') || !std::getline(fields, idx, '\t') || !std::getline(fields, cnt, '\t'))
      throw DataError(path + ":" + std::to_string(line_no) + ": expected word<TAB>index<TAB>count");
    try {
      if (std::stoi(idx) != v.size()) throw DataError(path + ":" + std::to_string(line_no) + ": non-dense index");
      v.add(word, std::stol(cnt));
    } catch (const std::logic_error &) {
      throw DataError(path + ":" + std::to_string(line_no) + ": bad number");
    }
  }
  const auto it = v.index_.find(kUnkToken);
  if (it == v.index_.end()) throw DataError(path + ": vocabulary has no <unk> entry");
  v.unk_index_ = it->second;
  v.size_cap_ = v.size() - 1;
  return v;
}

PretrainedEmbeddings load_embeddings(const std::string &path, std::optional<int> expected_dim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings: " + path);
  PretrainedEmbeddings emb;
  emb.dim = expected_dim.value_or(0);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    std::vector<double> vals;
    std::string f;
    while (fields >> f) {
      char *end = nullptr;
      const double x = std::strtod(f.c_str(), &end);
      if (end != f.c_str() + f.size() || !std::isfinite(x))
        throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric field '" + f + "'");
      vals.push_back(x);
    }
    if (emb.dim == 0) emb.dim = static_cast<int>(vals.size());
    if (vals.empty() || static_cast<int>(vals.size()) != emb.dim)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(emb.dim) + " values, found " +
                      std::to_string(vals.size()));
    if (emb.has(word)) continue;
    emb.words.push_back(word);
    emb.vectors[word] = Eigen::Map<Eigen::VectorXd>(vals.data(), emb.dim);
  }
  return emb;
}

void write_embeddings(const std::string &path, const PretrainedEmbeddings &emb, int significant_digits) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write embeddings: " + path);
  out << std::setprecision(significant_digits);
  for (const auto &w : emb.words) {
    out << w;
    const Eigen::VectorXd &v = emb.vectors.at(w);
    for (Eigen::Index k = 0; k < v.size(); ++k) out << ' ' << v[k];
    out << '\n';
  }
}

const char *to_string(RowSource s) {
  switch (s) {
    case RowSource::kPretrained: return "pretrained";
    case RowSource::kLearned: return "learned";
    case RowSource::kRandom: return "random";
    case RowSource::kUnkShared: return "unk-shared";
  }
  return "?";
}

const char *to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::kDirect: return "direct";
    case SelectionStrategy::kRandom: return "random";
    case SelectionStrategy::kUnknown: return "unknown";
    case SelectionStrategy::kStandard: return "standard";
  }
  return "?";
}

SelectionStrategy parse_strategy(const std::string &name) {
  std::string n = name;
  for (char &c : n) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (n == "direct") return SelectionStrategy::kDirect;
  if (n == "random") return SelectionStrategy::kRandom;
  if (n == "unknown") return SelectionStrategy::kUnknown;
  if (n == "standard") return SelectionStrategy::kStandard;
  throw ConfigError("unknown embedding strategy: " + name);
}

Selection select_embeddings(SelectionStrategy strategy, const Vocabulary &train_vocab, const Vocabulary &target_vocab,
                            const PretrainedEmbeddings &pretrained, const EmbeddingTable *learned, std::uint64_t seed,
                            const TokenCorpus &reference) {
  const bool needs_learned = strategy == SelectionStrategy::kDirect || strategy == SelectionStrategy::kStandard;
  if (needs_learned && learned == nullptr)
    throw ConfigError(std::string("strategy '") + to_string(strategy) + "' needs a learned embedding table");
  if (learned != nullptr && learned->matrix.rows() != train_vocab.size())
    throw ConfigError("learned table rows do not match the training vocabulary");
  int dim = learned != nullptr ? static_cast<int>(learned->matrix.cols()) : pretrained.dim;
  if (learned != nullptr && pretrained.dim != 0 && pretrained.dim != dim)
    throw ConfigError("pretrained dimension " + std::to_string(pretrained.dim) + " differs from learned dimension " +
                      std::to_string(dim));
  if (dim <= 0) throw ConfigError("no embedding dimension available");

  Rng rng(seed);
  auto random_row = [&] {
    Eigen::VectorXd v(dim);
    for (int k = 0; k < dim; ++k) v[k] = rng.uniform(-0.1, 0.1);
    return v;
  };
  auto learned_row = [&](const std::string &w) -> Eigen::VectorXd {
    return learned->matrix.row(train_vocab.index(w)).transpose();
  };

  Selection sel;
  sel.report.strategy = strategy;
  std::vector<std::string> kept;
  std::vector<Eigen::VectorXd> rows;
  std::vector<RowSource> sources;
  const Vocabulary &candidates = strategy == SelectionStrategy::kDirect ? train_vocab : target_vocab;
  for (const auto &w : candidates.words()) {
    if (w == kUnkToken) continue;
    RowSource src;
    Eigen::VectorXd row;
    if (strategy == SelectionStrategy::kDirect) {
      src = RowSource::kLearned;
      row = learned_row(w);
    } else if (pretrained.has(w)) {
      src = RowSource::kPretrained;
      row = pretrained.vectors.at(w);
    } else if (strategy == SelectionStrategy::kUnknown) {
      src = RowSource::kUnkShared;
    } else if (strategy == SelectionStrategy::kStandard && train_vocab.contains(w)) {
      src = RowSource::kLearned;
      row = learned_row(w);
    } else {
      src = RowSource::kRandom;
      row = random_row();
    }
    sel.report.assignments.push_back({w, src});
    if (src == RowSource::kUnkShared) continue;
    kept.push_back(w);
    rows.push_back(std::move(row));
    sources.push_back(src);
  }

  // The unknown entry itself.
  Eigen::VectorXd unk_row;
  RowSource unk_src;
  if (pretrained.has(kUnkToken)) {
    unk_row = pretrained.vectors.at(kUnkToken);
    unk_src = RowSource::kUnkShared;
  } else if (learned != nullptr) {
    unk_row = learned->matrix.row(train_vocab.unk_index()).transpose();
    unk_src = RowSource::kLearned;
  } else {
    unk_row = random_row();
    unk_src = RowSource::kRandom;
  }
  sel.report.assignments.push_back({kUnkToken, RowSource::kUnkShared});

  sel.vocab = Vocabulary::from_words(kept, candidates.lowercase());
  sel.table.matrix = Eigen::MatrixXd(sel.vocab.size(), dim);
  for (std::size_t k = 0; k < rows.size(); ++k) sel.table.matrix.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
  sel.table.matrix.row(sel.vocab.unk_index()) = unk_row.transpose();
  sel.table.sources = sources;
  sel.table.sources.push_back(unk_src);

  for (const char *tag : {"pretrained", "learned", "random", "unk-shared"}) sel.report.counts[tag] = 0;
  for (const auto &a : sel.report.assignments) ++sel.report.counts[to_string(a.source)];
  if (!reference.empty()) {
    long tokens = 0;
    for (const auto &s : reference) tokens += static_cast<long>(s.size());
    if (tokens > 0) {
      const UnknownStats st = unknown_stats(reference, sel.vocab);
      sel.report.type_rate = st.type_rate;
      sel.report.token_rate = st.token_rate;
    }
  }
  return sel;
}

UnknownStats unknown_stats(const TokenCorpus &corpus, const Vocabulary &vocab) {
  std::unordered_set<std::string> types, oov_types;
  long tokens = 0, oov_tokens = 0;
  for (const auto &sent : corpus)
    for (const auto &tok : sent) {
      const std::string w = vocab.normalize(tok);
      ++tokens;
      types.insert(w);
      if (!vocab.contains(w)) {
        ++oov_tokens;
        oov_types.insert(w);
      }
    }
  if (tokens == 0) throw DegenerateInputError("unknown-word statistics need a non-empty corpus");
  return {static_cast<double>(oov_types.size()) / static_cast<double>(types.size()),
          static_cast<double>(oov_tokens) / static_cast<double>(tokens)};
}

}  // namespace pcfg
