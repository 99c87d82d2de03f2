#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "pcfg/chart.hpp"
#include "pcfg/grammar.hpp"

namespace pcfg {

struct ImageVector {
  std::string id;
  Eigen::VectorXd values;
};

struct GroundingConfig {
  double margin = 0.2;
  int d_img = 0;

  void check() const;
};

// Projected span features for every span of width >= 2 of one sentence.
class SpanReps {
 public:
  SpanReps() = default;
  explicit SpanReps(int n) : n_(n), reps_(static_cast<std::size_t>(n + 1) * static_cast<std::size_t>(n + 1)) {}
  int length() const { return n_; }
  Eigen::VectorXd &at(int i, int j) { return reps_[index(i, j)]; }
  const Eigen::VectorXd &at(int i, int j) const { return reps_[index(i, j)]; }

 private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_ + 1) + static_cast<std::size_t>(j);
  }
  int n_ = 0;
  std::vector<Eigen::VectorXd> reps_;
};

// projection * mean(word_vectors.rows(i..j-1)) + bias. `word_vectors` holds
// one row per token. Throws StructuralError on an empty or out-of-range span.
Eigen::VectorXd span_representation(const Eigen::MatrixXd &word_vectors, Span span,
                                    const Eigen::MatrixXd &projection, const Eigen::VectorXd &bias);

SpanReps all_span_representations(const Eigen::MatrixXd &word_vectors, const Eigen::MatrixXd &projection,
                                  const Eigen::VectorXd &bias);

// Cosine similarity; 0 when either vector has zero norm.
double cosine(const Eigen::VectorXd &a, const Eigen::VectorXd &b);
// d cosine(a, b) / d b.
Eigen::VectorXd cosine_grad_b(const Eigen::VectorXd &a, const Eigen::VectorXd &b);

// s(v, w) = sum over width >= 2 spans of post(i,j) * cosine(v, rep(i,j)).
double expected_match_score(const Eigen::VectorXd &image, const PosteriorTable &posteriors, const SpanReps &reps);

// (1/B) sum_{i != j} [max(0, m - S_ii + S_ij) + max(0, m - S_jj + S_ij)].
// Rows index images and columns captions; the diagonal holds aligned pairs.
double hinge_loss(const Eigen::MatrixXd &scores, double margin);

// Subgradient of hinge_loss with respect to every score entry.
Eigen::MatrixXd hinge_loss_grad(const Eigen::MatrixXd &scores, double margin);

// Reads `id<TAB>v1,v2,...` lines. Throws DataError with the line number on
// malformed rows or inconsistent dimensions.
std::vector<ImageVector> read_image_vectors(const std::string &path);
void write_image_vectors(const std::string &path, const std::vector<ImageVector> &images);

// Dense little-endian float64 matrix (`rows`, `cols` as uint64 header) plus a
// sidecar with one id per line.
std::vector<ImageVector> read_image_matrix(const std::string &matrix_path, const std::string &index_path);
void write_image_matrix(const std::string &matrix_path, const std::string &index_path,
                        const std::vector<ImageVector> &images);

}  // namespace pcfg
