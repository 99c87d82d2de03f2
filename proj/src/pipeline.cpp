#include "pcfg/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "pcfg/errors.hpp"
#include "pcfg/random.hpp"

namespace pcfg {

namespace fs = std::filesystem;

// ----- Corpora -----

std::string normalize_label(const std::string &label) {
  if (label.empty() || label[0] == '-') return label;
  const auto cut = label.find_first_of("-=");
  return cut == std::string::npos ? label : label.substr(0, cut);
}

std::optional<LabeledTree> clean_tree(const LabeledTree &tree) {
  if (tree.terminal) return tree;
  if (tree.label == "-NONE-") return std::nullopt;
  LabeledTree out;
  out.label = normalize_label(tree.label);
  for (const auto &c : tree.children)
    if (auto cc = clean_tree(c)) out.children.push_back(std::move(*cc));
  if (out.children.empty()) return std::nullopt;
  return out;
}

Treebank treebank_from_trees(const std::vector<LabeledTree> &trees, const std::string &path) {
  Treebank tb;
  tb.path = path;
  for (std::size_t k = 0; k < trees.size(); ++k) {
    auto cleaned = clean_tree(trees[k]);
    if (!cleaned) continue;
    TreebankEntry e;
    e.id = std::to_string(k);
    cleaned->collect_words(e.tokens);
    const SpanSet all = labeled_tree_spans(*cleaned, SpanPolicy::kKeepAll);
    for (const Span &s : all.spans)
      if (s.end - s.start >= 2) e.spans.insert(s, all.labels.at(s));
    e.tree = std::move(*cleaned);
    tb.entries.push_back(std::move(e));
  }
  return tb;
}

Treebank read_treebank(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open treebank: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::vector<LabeledTree> trees;
  try {
    trees = parse_sexpressions(buf.str());
  } catch (const DataError &e) {
    throw DataError(path + ": " + e.what());
  }
  if (trees.empty()) throw DataError("empty treebank: " + path);
  return treebank_from_trees(trees, path);
}

void write_treebank(const std::string &path, const std::vector<LabeledTree> &trees) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write treebank: " + path);
  for (const auto &t : trees) out << to_sexpression(t) << '\n';
}

TextCorpus read_token_lines(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus: " + path);
  TextCorpus c;
  std::string line;
  long index = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::vector<std::string> toks;
    std::string t;
    while (fields >> t) toks.push_back(t);
    if (toks.empty()) {
      ++c.skipped;
    } else {
      c.tokens.push_back(std::move(toks));
      c.ids.push_back(std::to_string(index));
    }
    ++index;
  }
  return c;
}

Sentence make_sentence(const std::vector<std::string> &tokens, const Vocabulary &vocab, std::string id) {
  Sentence s;
  s.tokens = vocab.encode(tokens);
  s.raw_tokens = tokens;
  s.id = std::move(id);
  return s;
}

std::vector<Sentence> read_plaintext(const std::string &path, const Vocabulary &vocab, long *skipped) {
  const TextCorpus c = read_token_lines(path);
  if (skipped != nullptr) *skipped = c.skipped;
  std::vector<Sentence> out;
  for (std::size_t k = 0; k < c.tokens.size(); ++k) out.push_back(make_sentence(c.tokens[k], vocab, c.ids[k]));
  return out;
}

// ----- Synthetic data -----

SyntheticGrammar toy_grammar(std::uint64_t seed) {
  SyntheticGrammar g;
  g.nonterminal_names = {"S", "NP", "VP"};
  g.preterminal_names = {"Det", "Adj", "N", "V"};
  const std::vector<std::vector<std::string>> lex = {{"the", "a", "this", "every", "some"},
                                                     {"big", "red", "old", "small", "happy"},
                                                     {"dog", "cat", "man", "park", "ball"},
                                                     {"saw", "liked", "chased", "found", "took"}};
  for (const auto &ws : lex) g.words.insert(g.words.end(), ws.begin(), ws.end());
  g.table = RuleTable({3, 4, static_cast<int>(g.words.size())}, kNegInf);
  constexpr int S = 0, NP = 1, VP = 2, Det = 3, Adj = 4, N = 5, V = 6;
  g.table.start(S) = 0.0;
  g.table.binary(S, NP, VP) = 0.0;
  g.table.binary(NP, Det, N) = std::log(0.65);
  g.table.binary(NP, NP, Adj) = std::log(0.35);
  g.table.binary(VP, V, NP) = std::log(0.55);
  g.table.binary(VP, NP, V) = std::log(0.25);
  g.table.binary(VP, V, S) = std::log(0.20);
  Rng rng(seed);
  for (int t = 0; t < 4; ++t) {
    std::vector<double> w(5);
    double total = 0.0;
    for (double &x : w) {
      double u = rng.uniform();
      while (u <= 0.0) u = rng.uniform();
      x = -std::log(u);
      total += x;
    }
    for (int k = 0; k < 5; ++k) g.table.preterm(t, t * 5 + k) = std::log(w[static_cast<std::size_t>(k)] / total);
  }
  return g;
}

LabeledTree to_labeled_tree(const ParseTree &tree, const std::vector<std::string> &words,
                            const std::vector<std::string> &nt_names, const std::vector<std::string> &pt_names) {
  std::function<LabeledTree(int)> build = [&](int idx) {
    const TreeNode &nd = tree.node(idx);
    LabeledTree out;
    if (nd.is_leaf()) {
      out.label = nd.symbol >= 0 && nd.symbol < static_cast<int>(pt_names.size()) ? pt_names[static_cast<std::size_t>(nd.symbol)] : "T";
      out.children.push_back(LabeledTree{words.at(static_cast<std::size_t>(nd.start)), {}, true});
    } else {
      out.label = nd.symbol >= 0 && nd.symbol < static_cast<int>(nt_names.size()) ? nt_names[static_cast<std::size_t>(nd.symbol)] : "X";
      out.children.push_back(build(nd.left));
      out.children.push_back(build(nd.right));
    }
    return out;
  };
  return build(tree.root());
}

SyntheticCorpus sample_corpus(const SyntheticGrammar &g, int count, int min_length, int max_length,
                              std::uint64_t seed) {
  if (count < 0 || min_length < 1 || max_length < min_length) throw ConfigError("invalid sampling bounds");
  SyntheticCorpus c;
  std::uint64_t attempt = 0;
  const std::uint64_t limit = static_cast<std::uint64_t>(count) * 1000 + 1000;
  while (static_cast<int>(c.samples.size()) < count) {
    if (attempt > limit) throw ConfigError("sampling bounds reject almost every sentence");
    auto s = sample_sentence(g.table, max_length, derive_seed(seed, attempt++), &g.words);
    if (!s || s->sentence.length() < min_length) continue;
    c.trees.push_back(to_labeled_tree(s->tree, s->sentence.raw_tokens, g.nonterminal_names, g.preterminal_names));
    c.samples.push_back(std::move(*s));
  }
  return c;
}

std::vector<ImageVector> synthetic_images(const SyntheticGrammar &g, const SyntheticCorpus &corpus, double noise,
                                          std::uint64_t seed, const std::vector<std::string> &ids) {
  const int nt = g.table.shape().num_nonterminals;
  const int v = static_cast<int>(g.words.size());
  Rng rng(seed);
  std::vector<ImageVector> out;
  for (std::size_t k = 0; k < corpus.samples.size(); ++k) {
    const Sample &s = corpus.samples[k];
    Eigen::VectorXd img = Eigen::VectorXd::Zero(nt * v);
    for (const TreeNode &nd : s.tree.nodes()) {
      if (nd.is_leaf() || nd.symbol < 0) continue;
      const double w = 1.0 / static_cast<double>(nd.end - nd.start);
      for (int t = nd.start; t < nd.end; ++t) img[nd.symbol * v + s.sentence.tokens[static_cast<std::size_t>(t)]] += w;
    }
    for (Eigen::Index i = 0; i < img.size(); ++i) img[i] += noise * rng.normal();
    out.push_back({k < ids.size() ? ids[k] : std::to_string(k), img});
  }
  return out;
}

// ----- Configuration -----

ExperimentConfig::ExperimentConfig() {
  model.shape = {10, 20, 1};
  model.d_z = 0;
}

void ExperimentConfig::check() const {
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  if (max_length < 0.0) throw ConfigError("max_length must be positive when set");
  if (train_format != "text" && train_format != "treebank") throw ConfigError("train_format must be text or treebank");
  if (test_format != "text" && test_format != "treebank") throw ConfigError("test_format must be text or treebank");
  if (bucket_width < 1) throw ConfigError("bucket_width must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (!(init_scale >= 0.0) || !(word_init_scale >= 0.0)) throw ConfigError("init scales must be non-negative");
  parse_strategy(strategy);
  parse_decoder(decoder);
  training.check();
  ModelDims d = model;
  d.shape.vocab_size = std::max(1, d.shape.vocab_size);
  d.check();
}

nlohmann::json to_json(const ExperimentConfig &c) {
  return {{"train_path", c.train_path},
          {"train_format", c.train_format},
          {"dev_path", c.dev_path},
          {"test_path", c.test_path},
          {"test_format", c.test_format},
          {"gold_path", c.gold_path},
          {"image_path", c.image_path},
          {"embeddings_path", c.embeddings_path},
          {"freeze_embeddings", c.freeze_embeddings},
          {"output_dir", c.output_dir},
          {"resume_from", c.resume_from},
          {"vocab_size", c.vocab_size},
          {"lowercase", c.lowercase},
          {"max_length", c.max_length},
          {"model",
           {{"num_nonterminals", c.model.shape.num_nonterminals},
            {"num_preterminals", c.model.shape.num_preterminals},
            {"d_sym", c.model.d_sym},
            {"d_hidden", c.model.d_hidden},
            {"d_word", c.model.d_word},
            {"d_z", c.model.d_z}}},
          {"training",
           {{"alpha", c.training.alpha},
            {"learning_rate", c.training.learning_rate},
            {"batch_size", c.training.batch_size},
            {"max_epochs", c.training.max_epochs},
            {"model_seed", c.training.model_seed},
            {"data_seed", c.training.data_seed},
            {"margin", c.training.margin},
            {"beta1", c.training.beta1},
            {"beta2", c.training.beta2},
            {"adam_eps", c.training.adam_eps}}},
          {"init_scale", c.init_scale},
          {"word_init_scale", c.word_init_scale},
          {"checkpoint_every", c.checkpoint_every},
          {"strategy", c.strategy},
          {"decoder", c.decoder},
          {"selection_seed", c.selection_seed},
          {"perm_seed", c.perm_seed},
          {"bucket_width", c.bucket_width}};
}

namespace {

void reject_unknown(const nlohmann::json &defaults, const nlohmann::json &given, const std::string &prefix) {
  if (!given.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key: " + key);
    if (defaults.at(it.key()).is_object()) reject_unknown(defaults.at(it.key()), it.value(), key);
  }
}

template <typename T>
T field(const nlohmann::json &j, const char *key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception &) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json &given) {
  const nlohmann::json defaults = to_json(ExperimentConfig{});
  reject_unknown(defaults, given, "");
  nlohmann::json j = defaults;
  j.merge_patch(given);
  ExperimentConfig c;
  c.train_path = field<std::string>(j, "train_path");
  c.train_format = field<std::string>(j, "train_format");
  c.dev_path = field<std::string>(j, "dev_path");
  c.test_path = field<std::string>(j, "test_path");
  c.test_format = field<std::string>(j, "test_format");
  c.gold_path = field<std::string>(j, "gold_path");
  c.image_path = field<std::string>(j, "image_path");
  c.embeddings_path = field<std::string>(j, "embeddings_path");
  c.freeze_embeddings = field<bool>(j, "freeze_embeddings");
  c.output_dir = field<std::string>(j, "output_dir");
  c.resume_from = field<std::string>(j, "resume_from");
  c.vocab_size = field<int>(j, "vocab_size");
  c.lowercase = field<bool>(j, "lowercase");
  c.max_length = field<double>(j, "max_length");
  const auto &m = j.at("model");
  c.model.shape.num_nonterminals = field<int>(m, "num_nonterminals");
  c.model.shape.num_preterminals = field<int>(m, "num_preterminals");
  c.model.d_sym = field<int>(m, "d_sym");
  c.model.d_hidden = field<int>(m, "d_hidden");
  c.model.d_word = field<int>(m, "d_word");
  c.model.d_z = field<int>(m, "d_z");
  const auto &t = j.at("training");
  c.training.alpha = field<double>(t, "alpha");
  c.training.learning_rate = field<double>(t, "learning_rate");
  c.training.batch_size = field<int>(t, "batch_size");
  c.training.max_epochs = field<int>(t, "max_epochs");
  c.training.model_seed = field<std::uint64_t>(t, "model_seed");
  c.training.data_seed = field<std::uint64_t>(t, "data_seed");
  c.training.margin = field<double>(t, "margin");
  c.training.beta1 = field<double>(t, "beta1");
  c.training.beta2 = field<double>(t, "beta2");
  c.training.adam_eps = field<double>(t, "adam_eps");
  c.init_scale = field<double>(j, "init_scale");
  c.word_init_scale = field<double>(j, "word_init_scale");
  c.checkpoint_every = field<int>(j, "checkpoint_every");
  c.strategy = field<std::string>(j, "strategy");
  c.decoder = field<std::string>(j, "decoder");
  c.selection_seed = field<std::uint64_t>(j, "selection_seed");
  c.perm_seed = field<std::uint64_t>(j, "perm_seed");
  c.bucket_width = field<int>(j, "bucket_width");
  c.check();
  return c;
}

void apply_override(nlohmann::json &j, const std::string &assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception &) {
    value = raw;
  }
  nlohmann::json *node = &j;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    pos = dot + 1;
  }
}

ExperimentConfig load_config(const std::string &path, const std::vector<std::string> &overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
      throw ConfigError("config " + path + ": " + e.what());
    }
  }
  for (const auto &o : overrides) apply_override(j, o);
  return config_from_json(j);
}

std::string resolve_output_dir(const ExperimentConfig &c) {
  if (const char *env = std::getenv("PCFG_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return c.output_dir;
}

// ----- Drivers -----

namespace {

struct LoadedCorpus {
  TokenCorpus tokens;
  std::vector<std::string> ids;
};

LoadedCorpus load_corpus(const std::string &path, const std::string &format, std::ostream *progress) {
  if (path.empty()) throw ConfigError("corpus path is not set");
  if (!fs::exists(path)) throw ConfigError("corpus not found: " + path);
  LoadedCorpus c;
  if (format == "treebank") {
    const Treebank tb = read_treebank(path);
    for (const auto &e : tb.entries) {
      c.tokens.push_back(e.tokens);
      c.ids.push_back(e.id);
    }
  } else {
    TextCorpus t = read_token_lines(path);
    if (t.skipped > 0 && progress != nullptr) *progress << "skipped " << t.skipped << " empty lines in " << path << '\n';
    c.tokens = std::move(t.tokens);
    c.ids = std::move(t.ids);
  }
  return c;
}

std::vector<ImageVector> load_images(const std::string &path) {
  if (path.ends_with(".bin")) return read_image_matrix(path, path.substr(0, path.size() - 4) + ".ids");
  return read_image_vectors(path);
}

void ensure_dir(const std::string &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
}

void write_json(const std::string &path, const nlohmann::json &j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace

Checkpoint make_checkpoint(const TrainerState &state, const Vocabulary &vocab, const ExperimentConfig &config) {
  Checkpoint ck;
  ck.params = state.params;
  ck.optimizer = state.optimizer;
  std::vector<long> counts;
  for (int i = 0; i < vocab.size(); ++i) counts.push_back(vocab.count(i));
  nlohmann::json log = nlohmann::json::array();
  for (const auto &e : state.log) log.push_back(to_json(e));
  ck.metadata = {{"vocab", vocab.words()},  {"vocab_counts", counts}, {"lowercase", vocab.lowercase()},
                 {"vocab_size", config.vocab_size}, {"epoch", state.epoch}, {"log", log},
                 {"batch_order", state.batch_order}, {"config", to_json(config)}};
  return ck;
}

Vocabulary checkpoint_vocabulary(const Checkpoint &ckpt) {
  try {
    const auto words = ckpt.metadata.at("vocab").get<std::vector<std::string>>();
    return Vocabulary::from_words(words, ckpt.metadata.value("lowercase", false));
  } catch (const nlohmann::json::exception &e) {
    throw DataError(std::string("checkpoint has no vocabulary: ") + e.what());
  }
}

TrainerState checkpoint_state(const Checkpoint &ckpt) {
  TrainerState st;
  st.params = ckpt.params;
  st.optimizer = ckpt.optimizer;
  st.epoch = ckpt.metadata.value("epoch", 0);
  for (const auto &e : ckpt.metadata.value("log", nlohmann::json::array())) st.log.push_back(epoch_log_from_json(e));
  st.batch_order = ckpt.metadata.value("batch_order", std::vector<long>{});
  return st;
}

TrainRun run_train(const ExperimentConfig &config, std::ostream *progress) {
  config.check();
  LoadedCorpus corpus = load_corpus(config.train_path, config.train_format, progress);
  if (config.max_length > 0.0) {
    LoadedCorpus kept;
    for (std::size_t k = 0; k < corpus.tokens.size(); ++k)
      if (static_cast<double>(corpus.tokens[k].size()) < config.max_length) {
        kept.tokens.push_back(corpus.tokens[k]);
        kept.ids.push_back(corpus.ids[k]);
      }
    if (kept.tokens.empty() && progress != nullptr) *progress << "length filter removed every training sentence\n";
    corpus = std::move(kept);
  }
  if (corpus.tokens.empty()) throw DataError("no training sentences in " + config.train_path);

  const bool grounded = config.training.alpha > 0.0;
  if (grounded && config.image_path.empty()) throw ConfigError("alpha > 0 needs image_path");
  if (!config.image_path.empty() && !fs::exists(config.image_path))
    throw ConfigError("image vectors not found: " + config.image_path);

  TrainRun run;
  ExperimentConfig cfg = config;
  std::optional<Checkpoint> resumed;
  if (!config.resume_from.empty()) {
    resumed = load_checkpoint(config.resume_from);
    run.vocab = checkpoint_vocabulary(*resumed);
  } else {
    run.vocab = Vocabulary::build(corpus.tokens, config.vocab_size, config.lowercase);
  }

  std::optional<PretrainedEmbeddings> pre;
  if (!config.embeddings_path.empty()) {
    if (!fs::exists(config.embeddings_path)) throw ConfigError("embeddings not found: " + config.embeddings_path);
    pre = load_embeddings(config.embeddings_path);
    cfg.model.d_word = pre->dim;
  }

  std::unordered_map<std::string, Eigen::VectorXd> images;
  int d_img = 0;
  if (grounded) {
    for (auto &img : load_images(config.image_path)) {
      d_img = static_cast<int>(img.values.size());
      images[img.id] = std::move(img.values);
    }
  }

  std::vector<TrainingExample> data;
  for (std::size_t k = 0; k < corpus.tokens.size(); ++k) {
    TrainingExample ex{make_sentence(corpus.tokens[k], run.vocab, corpus.ids[k]), std::nullopt};
    if (grounded)
      if (auto it = images.find(corpus.ids[k]); it != images.end()) ex.image = it->second;
    data.push_back(std::move(ex));
  }

  std::optional<DevSet> dev;
  if (!config.dev_path.empty()) {
    if (!fs::exists(config.dev_path)) throw ConfigError("dev treebank not found: " + config.dev_path);
    dev.emplace();
    for (const auto &e : read_treebank(config.dev_path).entries) {
      dev->sentences.push_back(make_sentence(e.tokens, run.vocab, e.id));
      dev->gold.push_back(e.spans);
    }
  }

  if (resumed) {
    run.state = checkpoint_state(*resumed);
  } else {
    ModelDims dims = cfg.model;
    dims.shape.vocab_size = run.vocab.size();
    dims.d_img = d_img;
    Eigen::MatrixXd words;
    if (pre) {
      Rng rng(derive_seed(cfg.training.model_seed, 0x776f726473ull));
      words = Eigen::MatrixXd(run.vocab.size(), pre->dim);
      for (int i = 0; i < run.vocab.size(); ++i) {
        const std::string &w = run.vocab.word(i);
        if (pre->has(w))
          words.row(i) = pre->vectors.at(w).transpose();
        else
          for (int d = 0; d < pre->dim; ++d) words(i, d) = rng.uniform(-0.1, 0.1);
      }
    }
    run.state = init_trainer(dims, cfg.training, cfg.init_scale, cfg.word_init_scale, pre ? &words : nullptr,
                             pre ? cfg.freeze_embeddings : false);
  }

  const std::string out_dir = resolve_output_dir(cfg);
  ensure_dir(out_dir);
  run.vocab.write((fs::path(out_dir) / "vocab.tsv").string());
  const std::string log_path = (fs::path(out_dir) / "train_log.jsonl").string();
  run.checkpoint_path = (fs::path(out_dir) / "checkpoint-last.bin").string();

  auto on_epoch = [&](const TrainerState &st) {
    std::ofstream log(log_path);
    for (const auto &e : st.log) log << to_json(e).dump() << '\n';
    const Checkpoint ck = make_checkpoint(st, run.vocab, cfg);
    if (st.epoch % cfg.checkpoint_every == 0 || st.epoch == cfg.training.max_epochs) {
      save_checkpoint((fs::path(out_dir) / ("checkpoint-epoch" + std::to_string(st.epoch) + ".bin")).string(), ck);
      save_checkpoint(run.checkpoint_path, ck);
    }
    if (progress != nullptr) {
      const EpochLog &e = st.log.back();
      *progress << "epoch " << e.epoch << " loss " << e.total << " lm " << e.lm_loss << " kl " << e.kl_term
                << " hinge " << e.grounding_loss;
      if (e.dev_sentence_f1) *progress << " dev_sf1 " << *e.dev_sentence_f1;
      *progress << '\n';
    }
  };
  train(run.state, data, cfg.training, dev ? &*dev : nullptr, on_epoch);
  if (run.state.log.empty() || !fs::exists(run.checkpoint_path)) {
    std::ofstream log(log_path);
    for (const auto &e : run.state.log) log << to_json(e).dump() << '\n';
    save_checkpoint(run.checkpoint_path, make_checkpoint(run.state, run.vocab, cfg));
  }
  return run;
}

ParseRun parse_corpus(const Checkpoint &ckpt, const TokenCorpus &sentences, const std::vector<std::string> &ids,
                      SelectionStrategy strategy, const PretrainedEmbeddings &pretrained, Decoder decoder,
                      std::uint64_t selection_seed) {
  const Vocabulary train_vocab = checkpoint_vocabulary(ckpt);
  if (train_vocab.size() != ckpt.params.word_embeddings.rows())
    throw DataError("checkpoint vocabulary and word table differ in size");
  EmbeddingTable learned{ckpt.params.word_embeddings,
                         std::vector<RowSource>(static_cast<std::size_t>(train_vocab.size()), RowSource::kLearned)};
  const int cap = ckpt.metadata.value("vocab_size", 10000);
  bool any = false;
  for (const auto &s : sentences) any = any || !s.empty();
  const Vocabulary target = any ? Vocabulary::build(sentences, cap, train_vocab.lowercase())
                                : Vocabulary::from_words({}, train_vocab.lowercase());
  Selection sel = select_embeddings(strategy, train_vocab, target, pretrained, &learned, selection_seed,
                                    any ? sentences : TokenCorpus{});

  ParameterSet params = ckpt.params;
  params.word_embeddings = sel.table.matrix;
  params.dims.shape.vocab_size = sel.vocab.size();

  ParseRun run;
  run.selection = sel.report;
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    const Sentence s = make_sentence(sentences[k], sel.vocab, k < ids.size() ? ids[k] : std::to_string(k));
    SpanRecord r;
    r.id = s.id;
    r.tokens = sentences[k];
    r.length = s.length();
    for (int t : s.tokens) r.unk_count += t == sel.vocab.unk_index() ? 1 : 0;
    if (s.length() > 0) {
      const ParseOutput p = parse_sentence(params, s, decoder);
      r.spans = tree_to_spans(p.tree);
      r.tree = to_bracketed(p.tree, r.tokens);
      r.logp = p.log_marginal;
    }
    run.log_marginals.push_back(r.logp.value_or(std::numeric_limits<double>::quiet_NaN()));
    run.predictions.push_back(std::move(r));
  }
  return run;
}

void write_predictions(const std::string &path, const ParseRun &run) { write_span_records(path, run.predictions); }

ParseRun run_parse(const ExperimentConfig &config, const std::string &checkpoint_path) {
  config.check();
  const SelectionStrategy strategy = parse_strategy(config.strategy);
  const Decoder decoder = parse_decoder(config.decoder);
  if (checkpoint_path.empty() || !fs::exists(checkpoint_path)) throw ConfigError("checkpoint not found: " + checkpoint_path);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  PretrainedEmbeddings pre;
  if (!config.embeddings_path.empty()) {
    if (!fs::exists(config.embeddings_path)) throw ConfigError("embeddings not found: " + config.embeddings_path);
    pre = load_embeddings(config.embeddings_path);
  }
  const LoadedCorpus corpus = load_corpus(config.test_path, config.test_format, &std::cerr);
  ParseRun run = parse_corpus(ck, corpus.tokens, corpus.ids, strategy, pre, decoder, config.selection_seed);
  const std::string out_dir = resolve_output_dir(config);
  ensure_dir(out_dir);
  write_predictions((fs::path(out_dir) / "predictions.jsonl").string(), run);
  nlohmann::json counts = run.selection.counts;
  write_json((fs::path(out_dir) / "selection.json").string(),
             {{"strategy", to_string(run.selection.strategy)},
              {"counts", counts},
              {"type_rate", run.selection.type_rate},
              {"token_rate", run.selection.token_rate}});
  return run;
}

std::vector<SpanRecord> load_gold(const std::string &path) {
  if (path.ends_with(".jsonl")) return read_span_records(path);
  std::vector<SpanRecord> out;
  for (const auto &e : read_treebank(path).entries) {
    SpanRecord r;
    r.id = e.id;
    r.tokens = e.tokens;
    r.length = static_cast<int>(e.tokens.size());
    r.spans = e.spans;
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

std::vector<EvalRecord> aligned_records(const std::string &predictions_path, const std::string &gold_path) {
  const auto pred = read_span_records(predictions_path);
  const auto gold = load_gold(gold_path);
  std::set<std::string> pred_ids, gold_ids;
  for (const auto &p : pred) pred_ids.insert(p.id);
  for (const auto &g : gold) gold_ids.insert(g.id);
  if (pred_ids != gold_ids) {
    std::vector<std::string> bad;
    for (const auto &id : pred_ids)
      if (!gold_ids.count(id)) bad.push_back("pred-only:" + id);
    for (const auto &id : gold_ids)
      if (!pred_ids.count(id)) bad.push_back("gold-only:" + id);
    std::string msg = "prediction and gold sentences are not aligned (" + std::to_string(pred.size()) + " vs " +
                      std::to_string(gold.size()) + "):";
    for (std::size_t k = 0; k < bad.size() && k < 20; ++k) msg += " " + bad[k];
    if (bad.size() > 20) msg += " ...";
    throw DataError(msg);
  }
  return join_records(pred, gold);
}

}  // namespace

EvaluateRun run_evaluate(const std::string &predictions_path, const std::string &gold_path,
                         const std::string &output_dir, std::optional<std::uint64_t> perm_seed) {
  EvaluateRun run;
  run.records = aligned_records(predictions_path, gold_path);
  run.metrics = corpus_f1(run.records);
  nlohmann::json report = {{"metrics", to_json(run.metrics)}};
  if (perm_seed) {
    std::vector<SpanSet> preds;
    std::vector<int> lengths;
    for (const auto &r : run.records) {
      preds.push_back(r.pred);
      lengths.push_back(r.length);
    }
    const auto permuted = perm_baseline(preds, lengths, *perm_seed);
    std::vector<EvalRecord> perm_records;
    for (std::size_t k = 0; k < run.records.size(); ++k) {
      const auto &r = run.records[k];
      perm_records.push_back(make_record(r.id, r.length, r.unk_count, permuted[k], r.gold));
    }
    run.perm_metrics = corpus_f1(perm_records);
    report["perm"] = to_json(*run.perm_metrics);
    report["perm_seed"] = *perm_seed;
  }
  if (!output_dir.empty()) {
    ensure_dir(output_dir);
    write_json((fs::path(output_dir) / "metrics.json").string(), report);
    write_length_csv((fs::path(output_dir) / "metrics_by_length.csv").string(), run.metrics);
  }
  return run;
}

OverlapReport run_analyze_overlap(const std::string &train_treebank, const std::string &test_treebank,
                                  const std::string &output_dir, const Vocabulary *vocab) {
  auto inventory = [&](const std::string &path) {
    const Treebank tb = read_treebank(path);
    std::vector<LabeledTree> trees;
    std::vector<std::string> ids;
    for (const auto &e : tb.entries) {
      trees.push_back(e.tree);
      ids.push_back(e.id);
    }
    return extract_factors(trees, ids, vocab);
  };
  const OverlapReport report = overlap_rates(inventory(train_treebank), inventory(test_treebank));
  if (!output_dir.empty()) {
    ensure_dir(output_dir);
    write_overlap_csv((fs::path(output_dir) / "overlap.csv").string(), report);
    nlohmann::json j = nlohmann::json::object();
    for (const auto &[k, r] : report) j[k] = {{"type_rate", r.type_rate}, {"instance_rate", r.instance_rate}};
    write_json((fs::path(output_dir) / "overlap.json").string(), j);
  }
  return report;
}

ErrorBucketTable run_analyze_errors(const std::string &predictions_path, const std::string &gold_path,
                                    int bucket_width, const std::string &output_dir) {
  const ErrorBucketTable table = error_buckets(aligned_records(predictions_path, gold_path), bucket_width);
  if (!output_dir.empty()) {
    ensure_dir(output_dir);
    write_bucket_csv((fs::path(output_dir) / "error_buckets.csv").string(), table);
    std::vector<double> unk, ratio;
    for (const auto &r : table.rows)
      if (std::isfinite(r.ratio)) {
        unk.push_back(r.unk_count);
        ratio.push_back(r.ratio);
      }
    nlohmann::json corr;
    try {
      const CorrelationResult c = spearman(unk, ratio);
      corr = {{"rho", c.rho}, {"p_value", c.p_value}, {"n", c.n}};
    } catch (const std::exception &e) {
      corr = {{"error", e.what()}};
    }
    write_json((fs::path(output_dir) / "error_buckets.json").string(),
               {{"bucket_width", table.bucket_width}, {"rows", table.rows.size()}, {"unk_vs_ratio", corr}});
  }
  return table;
}

PairedTestResult run_significance(const std::string &csv_path, const std::string &column_a,
                                  const std::string &column_b, const std::string &output_dir) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open " + csv_path);
  auto split = [](const std::string &line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) {
      if (!f.empty() && f.back() == '\r') f.pop_back();
      out.push_back(f);
    }
    return out;
  };
  std::string line;
  if (!std::getline(in, line)) throw DataError(csv_path + ": missing header");
  const auto header = split(line);
  auto column = [&](const std::string &name) {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return k;
    throw ConfigError("column '" + name + "' not found in " + csv_path);
  };
  const std::size_t ia = column(column_a), ib = column(column_b);
  std::vector<double> a, b;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split(line);
    if (f.size() <= std::max(ia, ib)) throw DataError(csv_path + ":" + std::to_string(line_no) + ": missing fields");
    try {
      a.push_back(std::stod(f[ia]));
      b.push_back(std::stod(f[ib]));
    } catch (const std::logic_error &) {
      throw DataError(csv_path + ":" + std::to_string(line_no) + ": bad number");
    }
  }
  const PairedTestResult r = paired_t_test(a, b);
  if (!output_dir.empty()) {
    ensure_dir(output_dir);
    write_json((fs::path(output_dir) / "significance.json").string(),
               {{"column_a", column_a},
                {"column_b", column_b},
                {"n", r.n},
                {"t_stat", r.t_stat},
                {"p_value", r.p_value},
                {"mean_diff", r.mean_diff},
                {"std_diff", r.std_diff},
                {"reject_at_0.1", r.p_value < 0.1}});
  }
  return r;
}

}  // namespace pcfg
