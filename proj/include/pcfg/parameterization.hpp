#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcfg/chart.hpp"
#include "pcfg/grammar.hpp"

namespace pcfg {

struct ModelDims {
  GrammarShape shape;
  int d_sym = 64;
  int d_hidden = 64;
  int d_word = 100;
  int d_z = 32;   // 0 disables the compound latent
  int d_img = 0;  // 0 disables the grounding projection

  void check() const;
  bool operator==(const ModelDims &) const = default;
};

// Residual perceptron shared by one rule family:
//   h0 = u + latent_in * z,  h = h0 + w2 * relu(w1 * h0 + b1) + b2.
struct RuleScorer {
  Eigen::MatrixXd latent_in;  // [d_sym, d_z]
  Eigen::MatrixXd w1;         // [d_hidden, d_sym]
  Eigen::MatrixXd b1;         // [d_hidden, 1]
  Eigen::MatrixXd w2;         // [d_sym, d_hidden]
  Eigen::MatrixXd b2;         // [d_sym, 1]
};

// All trainable tensors. Vectors are stored as single-column matrices so the
// whole set can be visited uniformly by the optimiser, gradient checks and
// checkpoints.
struct ParameterSet {
  ModelDims dims;

  // Rows: nonterminals 0..N-1, preterminals N..N+P-1, then the root symbol.
  Eigen::MatrixXd symbol_embeddings;
  Eigen::MatrixXd word_embeddings;  // [V, d_word]
  bool word_embeddings_frozen = false;

  RuleScorer start_scorer;
  RuleScorer binary_scorer;
  RuleScorer preterm_scorer;

  Eigen::MatrixXd start_out;    // [N, d_sym]
  Eigen::MatrixXd start_bias;   // [N, 1]
  Eigen::MatrixXd binary_out;   // [S*S, d_sym], child pair (b, c) at row b*S + c
  Eigen::MatrixXd binary_bias;  // [S*S, 1]
  Eigen::MatrixXd preterm_proj; // [d_word, d_sym]; p(T->w) scores are e_w . (proj h_T)

  Eigen::MatrixXd encoder_mu;          // [d_z, d_word]
  Eigen::MatrixXd encoder_mu_bias;     // [d_z, 1]
  Eigen::MatrixXd encoder_logvar;      // [d_z, d_word]
  Eigen::MatrixXd encoder_logvar_bias; // [d_z, 1]

  Eigen::MatrixXd grounding_projection;  // [d_img, d_word]
  Eigen::MatrixXd grounding_bias;        // [d_img, 1]

  // Visits every tensor with a stable name, in a fixed order.
  template <typename F>
  void visit(F &&f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F &&f) const {
    visit_impl(*this, f);
  }

  // Same shapes, all zeros.
  ParameterSet zeros_like() const;
  std::size_t num_values() const;
  bool all_finite() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self &self, F &f) {
    f("symbol_embeddings", self.symbol_embeddings);
    f("word_embeddings", self.word_embeddings);
    auto scorer = [&](const char *prefix, auto &sc) {
      const std::string p(prefix);
      f((p + ".latent_in").c_str(), sc.latent_in);
      f((p + ".w1").c_str(), sc.w1);
      f((p + ".b1").c_str(), sc.b1);
      f((p + ".w2").c_str(), sc.w2);
      f((p + ".b2").c_str(), sc.b2);
    };
    scorer("start_scorer", self.start_scorer);
    scorer("binary_scorer", self.binary_scorer);
    scorer("preterm_scorer", self.preterm_scorer);
    f("start_out", self.start_out);
    f("start_bias", self.start_bias);
    f("binary_out", self.binary_out);
    f("binary_bias", self.binary_bias);
    f("preterm_proj", self.preterm_proj);
    f("encoder_mu", self.encoder_mu);
    f("encoder_mu_bias", self.encoder_mu_bias);
    f("encoder_logvar", self.encoder_logvar);
    f("encoder_logvar_bias", self.encoder_logvar_bias);
    f("grounding_projection", self.grounding_projection);
    f("grounding_bias", self.grounding_bias);
  }
};

// Gaussian initialisation for weights (std `init_scale`, word embeddings std
// `word_init_scale`), zero biases.
ParameterSet init_parameters(const ModelDims &dims, std::uint64_t seed, double init_scale = 0.2,
                             double word_init_scale = 1.0);

struct TrainingConfig {
  double alpha = 0.0;  // weight of the grounding hinge loss
  double learning_rate = 1e-3;
  int batch_size = 8;
  int max_epochs = 10;
  std::uint64_t model_seed = 0;  // initialisation and latent noise
  std::uint64_t data_seed = 0;   // shuffling only
  double margin = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void check() const;
};

struct LossBreakdown {
  double lm_loss = 0.0;         // mean -log p(w) (or -log p(w|z) with the latent)
  double kl_term = 0.0;         // mean KL(q(z|w) || N(0, I)); 0 when d_z = 0
  double grounding_loss = 0.0;  // batch hinge loss over image-paired items
  double total = 0.0;
};

// Unnormalised scores for every rule (potential mode). `z` must have d_z
// entries, or be empty when d_z = 0.
RuleTable compute_rule_scores(const ParameterSet &params, const Eigen::VectorXd &z);

// Row-wise log-softmax of compute_rule_scores; passes validate_grammar.
RuleTable compute_rule_table(const ParameterSet &params, const Eigen::VectorXd &z = Eigen::VectorXd());

struct LatentParams {
  Eigen::VectorXd mu;
  Eigen::VectorXd logvar;
};

// Mean word embedding followed by affine maps. Throws ConfigError when d_z = 0.
LatentParams encode_latent(const ParameterSet &params, const Sentence &sentence);

double kl_standard_normal(const Eigen::VectorXd &mu, const Eigen::VectorXd &logvar);

struct TrainingExample {
  Sentence sentence;
  std::optional<Eigen::VectorXd> image;
};

struct LossAndGradients {
  LossBreakdown loss;
  ParameterSet gradients;
  std::vector<double> log_marginals;  // log p(w) (or log p(w|z)) per item
};

// Joint objective: mean LM loss (+ mean KL) + alpha * hinge. Items without an
// image contribute only to the LM term. Gradients of frozen word embeddings
// are zeroed. Throws TrainingFault on a non-finite loss.
LossAndGradients loss_and_gradients(const ParameterSet &params, const std::vector<TrainingExample> &batch,
                                    const TrainingConfig &config, std::uint64_t noise_seed,
                                    long batch_id = 0);

struct OptimizerState {
  long step = 0;
  ParameterSet first_moment;
  ParameterSet second_moment;
};

OptimizerState init_optimizer(const ParameterSet &params);

// One Adam step in place. Frozen word embeddings are never touched.
void update_parameters(ParameterSet &params, const ParameterSet &grads, OptimizerState &state,
                       const TrainingConfig &config);

}  // namespace pcfg
