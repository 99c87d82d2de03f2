#include "pcfg/parameterization.hpp"

#include <cmath>

#include "pcfg/errors.hpp"
#include "pcfg/grounding.hpp"
#include "pcfg/random.hpp"

namespace pcfg {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void ModelDims::check() const {
  shape.check();
  if (d_sym < 1 || d_hidden < 1 || d_word < 1) throw ConfigError("model dimensions must be positive");
  if (d_z < 0 || d_img < 0) throw ConfigError("latent and image dimensions must be non-negative");
}

void TrainingConfig::check() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (!(margin > 0.0)) throw ConfigError("margin must be positive");
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out = *this;
  out.visit([](const char *, MatrixXd &m) { m.setZero(); });
  return out;
}

std::size_t ParameterSet::num_values() const {
  std::size_t total = 0;
  visit([&](const char *, const MatrixXd &m) { total += static_cast<std::size_t>(m.size()); });
  return total;
}

bool ParameterSet::all_finite() const {
  bool ok = true;
  visit([&](const char *, const MatrixXd &m) { ok = ok && m.allFinite(); });
  return ok;
}

ParameterSet init_parameters(const ModelDims &dims, std::uint64_t seed, double init_scale, double word_init_scale) {
  dims.check();
  const GrammarShape &g = dims.shape;
  const int nt = g.num_nonterminals;
  const int s = g.num_symbols();
  ParameterSet p;
  p.dims = dims;
  p.symbol_embeddings = MatrixXd(s + 1, dims.d_sym);
  p.word_embeddings = MatrixXd(g.vocab_size, dims.d_word);
  auto scorer = [&](RuleScorer &sc) {
    sc.latent_in = MatrixXd(dims.d_sym, dims.d_z);
    sc.w1 = MatrixXd(dims.d_hidden, dims.d_sym);
    sc.b1 = MatrixXd::Zero(dims.d_hidden, 1);
    sc.w2 = MatrixXd(dims.d_sym, dims.d_hidden);
    sc.b2 = MatrixXd::Zero(dims.d_sym, 1);
  };
  scorer(p.start_scorer);
  scorer(p.binary_scorer);
  scorer(p.preterm_scorer);
  p.start_out = MatrixXd(nt, dims.d_sym);
  p.start_bias = MatrixXd::Zero(nt, 1);
  p.binary_out = MatrixXd(s * s, dims.d_sym);
  p.binary_bias = MatrixXd::Zero(s * s, 1);
  p.preterm_proj = MatrixXd(dims.d_word, dims.d_sym);
  p.encoder_mu = MatrixXd(dims.d_z, dims.d_word);
  p.encoder_mu_bias = MatrixXd::Zero(dims.d_z, 1);
  p.encoder_logvar = MatrixXd(dims.d_z, dims.d_word);
  p.encoder_logvar_bias = MatrixXd::Zero(dims.d_z, 1);
  p.grounding_projection = MatrixXd(dims.d_img, dims.d_word);
  p.grounding_bias = MatrixXd::Zero(dims.d_img, 1);

  Rng rng(seed);
  p.visit([&](const char *name, MatrixXd &m) {
    const std::string n(name);
    if (n.find("bias") != std::string::npos || n.ends_with(".b1") || n.ends_with(".b2")) return;
    const double scale = n == "word_embeddings" ? word_init_scale : init_scale;
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = scale * rng.normal();
  });
  return p;
}

namespace {

struct FamilyForward {
  MatrixXd h0;
  MatrixXd pre;
  MatrixXd h;
};

FamilyForward run_scorer(const RuleScorer &sc, const MatrixXd &u, const VectorXd &z) {
  FamilyForward f;
  f.h0 = u;
  if (z.size() > 0) f.h0.rowwise() += (sc.latent_in * z).transpose();
  f.pre = f.h0 * sc.w1.transpose();
  f.pre.rowwise() += sc.b1.col(0).transpose();
  f.h = f.h0 + f.pre.cwiseMax(0.0) * sc.w2.transpose();
  f.h.rowwise() += sc.b2.col(0).transpose();
  return f;
}

// Returns d loss / d u for the symbol rows; accumulates weight grads and dz.
MatrixXd backward_scorer(const RuleScorer &sc, const FamilyForward &f, const VectorXd &z, const MatrixXd &dh,
                         RuleScorer &grad, VectorXd *dz) {
  const MatrixXd relu = f.pre.cwiseMax(0.0);
  grad.w2 += dh.transpose() * relu;
  grad.b2 += dh.colwise().sum().transpose();
  MatrixXd dpre = dh * sc.w2;
  dpre = dpre.cwiseProduct((f.pre.array() > 0.0).cast<double>().matrix());
  grad.w1 += dpre.transpose() * f.h0;
  grad.b1 += dpre.colwise().sum().transpose();
  MatrixXd dh0 = dh + dpre * sc.w1;
  if (z.size() > 0) {
    const VectorXd col = dh0.colwise().sum().transpose();
    grad.latent_in += col * z.transpose();
    if (dz != nullptr) *dz += sc.latent_in.transpose() * col;
  }
  return dh0;
}

struct RuleForward {
  FamilyForward start;
  FamilyForward binary;
  FamilyForward preterm;
  MatrixXd preterm_query;  // [P, d_word]
  RuleTable scores;
};

void check_latent(const ParameterSet &params, const VectorXd &z) {
  if (z.size() != 0 && z.size() != params.dims.d_z)
    throw StructuralError("latent vector has dimension " + std::to_string(z.size()) + ", expected " +
                          std::to_string(params.dims.d_z));
  if (z.size() == 0 && params.dims.d_z > 0)
    throw StructuralError("model has a latent of dimension " + std::to_string(params.dims.d_z) +
                          " but no z was supplied");
}

RuleForward forward_rules(const ParameterSet &params, const VectorXd &z) {
  check_latent(params, z);
  const GrammarShape &g = params.dims.shape;
  const int nt = g.num_nonterminals;
  const int np = g.num_preterminals;
  const int s = g.num_symbols();
  RuleForward f;
  f.start = run_scorer(params.start_scorer, params.symbol_embeddings.row(s), z);
  f.binary = run_scorer(params.binary_scorer, params.symbol_embeddings.topRows(nt), z);
  f.preterm = run_scorer(params.preterm_scorer, params.symbol_embeddings.middleRows(nt, np), z);

  f.scores = RuleTable(g);
  RowMajor start = f.start.h * params.start_out.transpose();
  start.row(0) += params.start_bias.col(0).transpose();
  Eigen::Map<RowMajor>(f.scores.start_logp().data(), 1, nt) = start;

  RowMajor binary = f.binary.h * params.binary_out.transpose();
  binary.rowwise() += params.binary_bias.col(0).transpose();
  Eigen::Map<RowMajor>(f.scores.binary_logp().data(), nt, s * s) = binary;

  f.preterm_query = f.preterm.h * params.preterm_proj.transpose();
  Eigen::Map<RowMajor>(f.scores.preterm_logp().data(), np, g.vocab_size) =
      f.preterm_query * params.word_embeddings.transpose();
  return f;
}

// d loss / d scores from d loss / d log-probabilities through row-wise log-softmax.
void softmax_backward(std::span<const double> logp, std::span<const double> dlogp, std::span<double> dscore) {
  double total = 0.0;
  for (double g : dlogp) total += g;
  for (std::size_t r = 0; r < logp.size(); ++r) dscore[r] = dlogp[r] - std::exp(logp[r]) * total;
}

void backward_rules(const ParameterSet &params, const RuleForward &f, const RuleTable &logp, const VectorXd &z,
                    const RuleTable &dlogp, ParameterSet &grads, VectorXd *dz) {
  const GrammarShape &g = params.dims.shape;
  const int nt = g.num_nonterminals;
  const int np = g.num_preterminals;
  const int s = g.num_symbols();
  const auto ss = static_cast<std::size_t>(s * s);
  const auto v = static_cast<std::size_t>(g.vocab_size);

  RuleTable dscore(g);
  softmax_backward(logp.start_logp(), dlogp.start_logp(), dscore.start_logp());
  for (int a = 0; a < nt; ++a) {
    const std::size_t off = static_cast<std::size_t>(a) * ss;
    softmax_backward(logp.binary_logp().subspan(off, ss), dlogp.binary_logp().subspan(off, ss),
                     dscore.binary_logp().subspan(off, ss));
  }
  for (int t = 0; t < np; ++t) {
    const std::size_t off = static_cast<std::size_t>(t) * v;
    softmax_backward(logp.preterm_logp().subspan(off, v), dlogp.preterm_logp().subspan(off, v),
                     dscore.preterm_logp().subspan(off, v));
  }

  const MatrixXd ds_start = Eigen::Map<const RowMajor>(dscore.start_logp().data(), 1, nt);
  grads.start_out += ds_start.transpose() * f.start.h;
  grads.start_bias += ds_start.transpose();
  const MatrixXd dh_start = ds_start * params.start_out;

  const MatrixXd ds_binary = Eigen::Map<const RowMajor>(dscore.binary_logp().data(), nt, s * s);
  grads.binary_out += ds_binary.transpose() * f.binary.h;
  grads.binary_bias += ds_binary.colwise().sum().transpose();
  const MatrixXd dh_binary = ds_binary * params.binary_out;

  const MatrixXd ds_preterm = Eigen::Map<const RowMajor>(dscore.preterm_logp().data(), np, g.vocab_size);
  const MatrixXd dq = ds_preterm * params.word_embeddings;
  grads.word_embeddings += ds_preterm.transpose() * f.preterm_query;
  grads.preterm_proj += dq.transpose() * f.preterm.h;
  const MatrixXd dh_preterm = dq * params.preterm_proj;

  grads.symbol_embeddings.row(s) +=
      backward_scorer(params.start_scorer, f.start, z, dh_start, grads.start_scorer, dz);
  grads.symbol_embeddings.topRows(nt) +=
      backward_scorer(params.binary_scorer, f.binary, z, dh_binary, grads.binary_scorer, dz);
  grads.symbol_embeddings.middleRows(nt, np) +=
      backward_scorer(params.preterm_scorer, f.preterm, z, dh_preterm, grads.preterm_scorer, dz);
}

RuleTable log_softmax(RuleTable scores) {
  scores.normalize();
  return scores;
}

VectorXd mean_word_vector(const ParameterSet &params, const Sentence &sentence) {
  VectorXd x = VectorXd::Zero(params.dims.d_word);
  for (int w : sentence.tokens) {
    if (w < 0 || w >= params.word_embeddings.rows()) throw StructuralError("token index outside vocabulary");
    x += params.word_embeddings.row(w).transpose();
  }
  return x / static_cast<double>(sentence.tokens.size());
}

MatrixXd token_vectors(const ParameterSet &params, const Sentence &sentence) {
  MatrixXd out(sentence.length(), params.dims.d_word);
  for (int i = 0; i < sentence.length(); ++i) out.row(i) = params.word_embeddings.row(sentence.tokens[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

RuleTable compute_rule_scores(const ParameterSet &params, const VectorXd &z) { return forward_rules(params, z).scores; }

RuleTable compute_rule_table(const ParameterSet &params, const VectorXd &z) {
  return log_softmax(compute_rule_scores(params, z));
}

LatentParams encode_latent(const ParameterSet &params, const Sentence &sentence) {
  if (params.dims.d_z <= 0) throw ConfigError("encode_latent requires d_z > 0");
  if (sentence.tokens.empty()) throw DegenerateInputError("cannot encode an empty sentence");
  const VectorXd x = mean_word_vector(params, sentence);
  return {params.encoder_mu * x + params.encoder_mu_bias.col(0),
          params.encoder_logvar * x + params.encoder_logvar_bias.col(0)};
}

double kl_standard_normal(const VectorXd &mu, const VectorXd &logvar) {
  if (mu.size() != logvar.size()) throw StructuralError("mu and logvar dimensions differ");
  double kl = 0.0;
  for (Eigen::Index k = 0; k < mu.size(); ++k) kl += std::exp(logvar[k]) + mu[k] * mu[k] - 1.0 - logvar[k];
  return 0.5 * kl;
}

LossAndGradients loss_and_gradients(const ParameterSet &params, const std::vector<TrainingExample> &batch,
                                    const TrainingConfig &config, std::uint64_t noise_seed, long batch_id) {
  if (batch.empty()) throw DegenerateInputError("empty batch");
  for (const auto &ex : batch)
    if (ex.sentence.length() < 2) throw DegenerateInputError("training sentences need at least two tokens");
  const int d_z = params.dims.d_z;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const bool grounding = config.alpha > 0.0;

  LossAndGradients out;
  out.gradients = params.zeros_like();
  ParameterSet &grads = out.gradients;

  struct Item {
    VectorXd z;
    VectorXd eps;
    LatentParams latent;
    RuleForward forward;
    RuleTable logp;
    CountTable counts;
    PosteriorTable posteriors;
  };
  std::vector<Item> items(batch.size());

  RuleForward shared;
  RuleTable shared_logp;
  if (d_z == 0) {
    shared = forward_rules(params, VectorXd());
    shared_logp = log_softmax(shared.scores);
  }

  for (std::size_t j = 0; j < batch.size(); ++j) {
    Item &it = items[j];
    const Sentence &sent = batch[j].sentence;
    const RuleTable *table = &shared_logp;
    if (d_z > 0) {
      it.latent = encode_latent(params, sent);
      Rng rng(derive_seed(noise_seed, j));
      it.eps = VectorXd(d_z);
      for (int k = 0; k < d_z; ++k) it.eps[k] = rng.normal();
      it.z = it.latent.mu + (0.5 * it.latent.logvar).array().exp().matrix().cwiseProduct(it.eps);
      it.forward = forward_rules(params, it.z);
      it.logp = log_softmax(it.forward.scores);
      table = &it.logp;
      out.loss.kl_term += inv_b * kl_standard_normal(it.latent.mu, it.latent.logvar);
    }
    const InsideChart in = inside(*table, sent);
    if (!std::isfinite(in.log_marginal))
      throw TrainingFault("non-finite log-likelihood in batch " + std::to_string(batch_id) + " (item " +
                          std::to_string(j) + ")");
    const OutsideChart outc = outside(*table, sent, in);
    it.counts = expected_rule_counts(*table, sent, in, outc);
    if (grounding && batch[j].image) it.posteriors = span_posteriors(in, outc);
    out.log_marginals.push_back(in.log_marginal);
    out.loss.lm_loss -= inv_b * in.log_marginal;
  }

  // d loss / d log-probabilities per item.
  std::vector<RuleTable> dlogp(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    dlogp[j] = items[j].counts;
    for (double &x : dlogp[j].start_logp()) x *= -inv_b;
    for (double &x : dlogp[j].binary_logp()) x *= -inv_b;
    for (double &x : dlogp[j].preterm_logp()) x *= -inv_b;
  }

  if (grounding) {
    std::vector<std::size_t> paired;
    for (std::size_t j = 0; j < batch.size(); ++j)
      if (batch[j].image) paired.push_back(j);
    const auto m = static_cast<Eigen::Index>(paired.size());
    if (m > 0) {
      if (params.grounding_projection.rows() != batch[paired[0]].image->size())
        throw StructuralError("image dimension differs from the grounding projection");
      std::vector<MatrixXd> words(paired.size());
      std::vector<SpanReps> reps(paired.size());
      for (Eigen::Index b = 0; b < m; ++b) {
        words[b] = token_vectors(params, batch[paired[b]].sentence);
        reps[b] = all_span_representations(words[b], params.grounding_projection, params.grounding_bias.col(0));
      }
      MatrixXd scores(m, m);
      for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = 0; b < m; ++b)
          scores(a, b) = expected_match_score(*batch[paired[a]].image, items[paired[b]].posteriors, reps[b]);
      out.loss.grounding_loss = hinge_loss(scores, config.margin);
      const MatrixXd dscores = config.alpha * hinge_loss_grad(scores, config.margin);

      for (Eigen::Index b = 0; b < m; ++b) {
        const std::size_t j = paired[b];
        const Sentence &sent = batch[j].sentence;
        const int n = sent.length();
        const PosteriorTable &post = items[j].posteriors;
        SpanTable weights(n, 0.0);
        for (int i = 0; i < n; ++i)
          for (int k = i + 2; k <= n; ++k) {
            const VectorXd &rep = reps[b].at(i, k);
            VectorXd drep = VectorXd::Zero(rep.size());
            double w = 0.0;
            for (Eigen::Index a = 0; a < m; ++a) {
              if (dscores(a, b) == 0.0) continue;
              const VectorXd &img = *batch[paired[a]].image;
              w += dscores(a, b) * cosine(img, rep);
              drep += dscores(a, b) * post.span_post.at(i, k) * cosine_grad_b(img, rep);
            }
            weights.at(i, k) = w;
            if (drep.isZero(0.0)) continue;
            const VectorXd mean = words[b].middleRows(i, k - i).colwise().mean().transpose();
            grads.grounding_projection += drep * mean.transpose();
            grads.grounding_bias += drep;
            const VectorXd dmean = params.grounding_projection.transpose() * drep / static_cast<double>(k - i);
            for (int t = i; t < k; ++t)
              grads.word_embeddings.row(sent.tokens[static_cast<std::size_t>(t)]) += dmean.transpose();
          }
        const RuleTable &table = d_z > 0 ? items[j].logp : shared_logp;
        const DirectionalCounts dc = expected_counts_directional(table, sent, weights);
        auto add = [](std::span<double> dst, std::span<const double> src) {
          for (std::size_t r = 0; r < dst.size(); ++r) dst[r] += src[r];
        };
        add(dlogp[j].start_logp(), dc.count_tangent.start_logp());
        add(dlogp[j].binary_logp(), dc.count_tangent.binary_logp());
        add(dlogp[j].preterm_logp(), dc.count_tangent.preterm_logp());
      }
    }
  }

  if (d_z == 0) {
    RuleTable total(params.dims.shape, 0.0);
    for (const RuleTable &d : dlogp) {
      for (std::size_t r = 0; r < d.start_logp().size(); ++r) total.start_logp()[r] += d.start_logp()[r];
      for (std::size_t r = 0; r < d.binary_logp().size(); ++r) total.binary_logp()[r] += d.binary_logp()[r];
      for (std::size_t r = 0; r < d.preterm_logp().size(); ++r) total.preterm_logp()[r] += d.preterm_logp()[r];
    }
    backward_rules(params, shared, shared_logp, VectorXd(), total, grads, nullptr);
  } else {
    for (std::size_t j = 0; j < batch.size(); ++j) {
      Item &it = items[j];
      VectorXd dz = VectorXd::Zero(d_z);
      backward_rules(params, it.forward, it.logp, it.z, dlogp[j], grads, &dz);
      const VectorXd half_std = (0.5 * it.latent.logvar).array().exp().matrix();
      VectorXd dmu = dz + inv_b * it.latent.mu;
      VectorXd dlogvar = 0.5 * dz.cwiseProduct(it.eps).cwiseProduct(half_std) +
                         inv_b * 0.5 * (it.latent.logvar.array().exp() - 1.0).matrix();
      const Sentence &sent = batch[j].sentence;
      const VectorXd x = mean_word_vector(params, sent);
      grads.encoder_mu += dmu * x.transpose();
      grads.encoder_mu_bias += dmu;
      grads.encoder_logvar += dlogvar * x.transpose();
      grads.encoder_logvar_bias += dlogvar;
      const VectorXd dx = (params.encoder_mu.transpose() * dmu + params.encoder_logvar.transpose() * dlogvar) /
                          static_cast<double>(sent.length());
      for (int w : sent.tokens) grads.word_embeddings.row(w) += dx.transpose();
    }
  }

  if (params.word_embeddings_frozen) grads.word_embeddings.setZero();
  out.loss.total = out.loss.lm_loss + out.loss.kl_term + config.alpha * out.loss.grounding_loss;
  if (!std::isfinite(out.loss.total))
    throw TrainingFault("non-finite loss in batch " + std::to_string(batch_id));
  return out;
}

OptimizerState init_optimizer(const ParameterSet &params) {
  return {0, params.zeros_like(), params.zeros_like()};
}

void update_parameters(ParameterSet &params, const ParameterSet &grads, OptimizerState &state,
                       const TrainingConfig &config) {
  std::vector<MatrixXd *> p, g, m, v;
  std::vector<std::string> names;
  params.visit([&](const char *name, MatrixXd &x) {
    p.push_back(&x);
    names.emplace_back(name);
  });
  const_cast<ParameterSet &>(grads).visit([&](const char *, MatrixXd &x) { g.push_back(&x); });
  state.first_moment.visit([&](const char *, MatrixXd &x) { m.push_back(&x); });
  state.second_moment.visit([&](const char *, MatrixXd &x) { v.push_back(&x); });
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k]->rows() != g[k]->rows() || p[k]->cols() != g[k]->cols() || p[k]->rows() != m[k]->rows() ||
        p[k]->cols() != m[k]->cols() || p[k]->rows() != v[k]->rows() || p[k]->cols() != v[k]->cols())
      throw StructuralError("shape mismatch in optimizer update for " + names[k]);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (names[k] == "word_embeddings" && params.word_embeddings_frozen) continue;
    MatrixXd &x = *p[k];
    const MatrixXd &grad = *g[k];
    MatrixXd &mk = *m[k];
    MatrixXd &vk = *v[k];
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double gi = grad.data()[i];
      double &mi = mk.data()[i];
      double &vi = vk.data()[i];
      mi = config.beta1 * mi + (1.0 - config.beta1) * gi;
      vi = config.beta2 * vi + (1.0 - config.beta2) * gi * gi;
      x.data()[i] -= config.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + config.adam_eps);
    }
  }
}

}  // namespace pcfg
