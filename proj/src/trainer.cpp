#include "pcfg/trainer.hpp"

#include <cstring>
#include <numeric>

#include "pcfg/errors.hpp"
#include "pcfg/random.hpp"

namespace pcfg {

namespace {

constexpr std::uint64_t kNoiseTag = 0x6e6f697365ull;

}  // namespace

Decoder parse_decoder(const std::string &name) {
  if (name == "mbr") return Decoder::kMbr;
  if (name == "viterbi") return Decoder::kViterbi;
  throw ConfigError("unknown decoder: " + name);
}

const char *to_string(Decoder d) { return d == Decoder::kMbr ? "mbr" : "viterbi"; }

ParseOutput parse_sentence(const ParameterSet &params, const Sentence &sentence, Decoder decoder) {
  const int n = sentence.length();
  if (n == 0) throw DegenerateInputError("cannot parse an empty sentence");
  if (n == 1) return {ParseTree::single_leaf(), std::nullopt};
  const RuleTable table =
      params.dims.d_z > 0 ? compute_rule_table(params, encode_latent(params, sentence).mu) : compute_rule_table(params);
  const InsideChart in = inside(table, sentence);
  if (decoder == Decoder::kViterbi) return {viterbi_decode(table, sentence).tree, in.log_marginal};
  const OutsideChart out = outside(table, sentence, in);
  return {mbr_decode(span_posteriors(in, out)), in.log_marginal};
}

MetricsReport evaluate_parser(const ParameterSet &params, const DevSet &dev, Decoder decoder) {
  if (dev.sentences.size() != dev.gold.size()) throw StructuralError("dev sentences and gold spans differ in count");
  std::vector<EvalRecord> records;
  records.reserve(dev.sentences.size());
  for (std::size_t k = 0; k < dev.sentences.size(); ++k) {
    const Sentence &s = dev.sentences[k];
    const ParseOutput p = parse_sentence(params, s, decoder);
    records.push_back(make_record(s.id, s.length(), 0, tree_to_spans(p.tree), dev.gold[k]));
  }
  return corpus_f1(records);
}

nlohmann::json to_json(const EpochLog &e) {
  nlohmann::json j = {{"epoch", e.epoch},     {"batches", e.batches},
                      {"lm_loss", e.lm_loss}, {"kl_term", e.kl_term},
                      {"grounding_loss", e.grounding_loss}, {"total", e.total}};
  j["dev_sentence_f1"] = e.dev_sentence_f1 ? nlohmann::json(*e.dev_sentence_f1) : nlohmann::json();
  j["dev_corpus_f1"] = e.dev_corpus_f1 ? nlohmann::json(*e.dev_corpus_f1) : nlohmann::json();
  return j;
}

EpochLog epoch_log_from_json(const nlohmann::json &j) {
  EpochLog e;
  e.epoch = j.at("epoch").get<int>();
  e.batches = j.at("batches").get<long>();
  e.lm_loss = j.at("lm_loss").get<double>();
  e.kl_term = j.at("kl_term").get<double>();
  e.grounding_loss = j.at("grounding_loss").get<double>();
  e.total = j.at("total").get<double>();
  if (!j.at("dev_sentence_f1").is_null()) e.dev_sentence_f1 = j.at("dev_sentence_f1").get<double>();
  if (!j.at("dev_corpus_f1").is_null()) e.dev_corpus_f1 = j.at("dev_corpus_f1").get<double>();
  return e;
}

TrainerState init_trainer(const ModelDims &dims, const TrainingConfig &config, double init_scale,
                          double word_init_scale, const Eigen::MatrixXd *pretrained_words, bool freeze_words) {
  config.check();
  TrainerState st;
  st.params = init_parameters(dims, derive_seed(config.model_seed, 0), init_scale, word_init_scale);
  if (pretrained_words != nullptr) {
    if (pretrained_words->rows() != st.params.word_embeddings.rows() ||
        pretrained_words->cols() != st.params.word_embeddings.cols())
      throw ConfigError("pretrained word table shape does not match the model");
    st.params.word_embeddings = *pretrained_words;
  }
  st.params.word_embeddings_frozen = freeze_words;
  st.optimizer = init_optimizer(st.params);
  return st;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t data_seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(data_seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

void run_epoch(TrainerState &state, const std::vector<TrainingExample> &data, const TrainingConfig &config,
               const DevSet *dev) {
  config.check();
  std::vector<std::size_t> order;
  for (std::size_t idx : epoch_order(data.size(), config.data_seed, state.epoch))
    if (data[idx].sentence.length() >= 2) order.push_back(idx);
  if (order.empty()) throw DegenerateInputError("no training sentences with at least two tokens");

  EpochLog log;
  log.epoch = state.epoch + 1;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const std::uint64_t noise_base = derive_seed(config.model_seed, kNoiseTag);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    std::vector<TrainingExample> batch;
    for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(data[order[k]]);
    const long step = state.optimizer.step;
    const LossAndGradients r =
        loss_and_gradients(state.params, batch, config, derive_seed(noise_base, static_cast<std::uint64_t>(step)), step);
    update_parameters(state.params, r.gradients, state.optimizer, config);
    if (!state.params.all_finite()) throw TrainingFault("non-finite parameters after batch " + std::to_string(step));
    state.batch_order.push_back(static_cast<long>(order[start]));
    ++log.batches;
    log.lm_loss += r.loss.lm_loss;
    log.kl_term += r.loss.kl_term;
    log.grounding_loss += r.loss.grounding_loss;
    log.total += r.loss.total;
  }
  const double inv = 1.0 / static_cast<double>(log.batches);
  log.lm_loss *= inv;
  log.kl_term *= inv;
  log.grounding_loss *= inv;
  log.total *= inv;
  if (dev != nullptr && !dev->sentences.empty()) {
    const MetricsReport m = evaluate_parser(state.params, *dev);
    log.dev_sentence_f1 = m.sentence_f1;
    log.dev_corpus_f1 = m.corpus_f1;
  }
  ++state.epoch;
  state.log.push_back(log);
}

void train(TrainerState &state, const std::vector<TrainingExample> &data, const TrainingConfig &config,
           const DevSet *dev, const std::function<void(const TrainerState &)> &on_epoch) {
  while (state.epoch < config.max_epochs) {
    run_epoch(state, data, config, dev);
    if (on_epoch) on_epoch(state);
  }
}

std::uint64_t parameter_checksum(const ParameterSet &params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  params.visit([&](const char *, const Eigen::MatrixXd &m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      std::uint64_t bits;
      const double v = m.data()[k];
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ull;
      }
    }
  });
  return h;
}

}  // namespace pcfg
