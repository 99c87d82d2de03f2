#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcfg/evaluation.hpp"
#include "pcfg/parameterization.hpp"

namespace pcfg {

enum class Decoder { kMbr, kViterbi };
Decoder parse_decoder(const std::string &name);
const char *to_string(Decoder d);

struct ParseOutput {
  ParseTree tree;
  std::optional<double> log_marginal;  // absent for single-token sentences
};

// Decodes with the rule table at z = mu (the posterior mean) when the model
// has a latent. Single-token sentences yield a single leaf.
ParseOutput parse_sentence(const ParameterSet &params, const Sentence &sentence, Decoder decoder = Decoder::kMbr);

struct DevSet {
  std::vector<Sentence> sentences;
  std::vector<SpanSet> gold;
};

MetricsReport evaluate_parser(const ParameterSet &params, const DevSet &dev, Decoder decoder = Decoder::kMbr);

struct EpochLog {
  int epoch = 0;
  long batches = 0;
  double lm_loss = 0.0;  // means over batches
  double kl_term = 0.0;
  double grounding_loss = 0.0;
  double total = 0.0;
  std::optional<double> dev_sentence_f1;
  std::optional<double> dev_corpus_f1;
};

nlohmann::json to_json(const EpochLog &e);
EpochLog epoch_log_from_json(const nlohmann::json &j);

struct TrainerState {
  ParameterSet params;
  OptimizerState optimizer;
  int epoch = 0;  // completed epochs
  std::vector<EpochLog> log;
  std::vector<long> batch_order;  // first item index of every consumed batch
};

// Parameters from derive_seed(model_seed, 0). `pretrained_words`, when given,
// replaces the word-embedding table (its shape must match).
TrainerState init_trainer(const ModelDims &dims, const TrainingConfig &config, double init_scale = 0.2,
                          double word_init_scale = 1.0, const Eigen::MatrixXd *pretrained_words = nullptr,
                          bool freeze_words = false);

// Item order of one epoch; depends only on (data_seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t data_seed, int epoch);

// One pass over `data` in epoch_order batches with Adam updates. Items with
// fewer than two tokens are skipped. Appends to the log and batch order.
void run_epoch(TrainerState &state, const std::vector<TrainingExample> &data, const TrainingConfig &config,
               const DevSet *dev = nullptr);

// Convenience loop up to config.max_epochs, invoking `on_epoch` after each.
void train(TrainerState &state, const std::vector<TrainingExample> &data, const TrainingConfig &config,
           const DevSet *dev = nullptr, const std::function<void(const TrainerState &)> &on_epoch = {});

// FNV-1a over every parameter value.
std::uint64_t parameter_checksum(const ParameterSet &params);

}  // namespace pcfg
