#include "pcfg/grounding.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "pcfg/errors.hpp"

namespace pcfg {

void GroundingConfig::check() const {
  if (!(margin > 0.0)) throw ConfigError("grounding margin must be positive");
  if (d_img < 0) throw ConfigError("image dimension must be non-negative");
}

Eigen::VectorXd span_representation(const Eigen::MatrixXd &word_vectors, Span span,
                                    const Eigen::MatrixXd &projection, const Eigen::VectorXd &bias) {
  if (span.end <= span.start) throw StructuralError("empty span has no representation");
  if (span.start < 0 || span.end > word_vectors.rows()) throw StructuralError("span outside sentence");
  if (projection.cols() != word_vectors.cols() || projection.rows() != bias.size())
    throw StructuralError("grounding projection shape mismatch");
  const Eigen::VectorXd mean =
      word_vectors.middleRows(span.start, span.width()).colwise().mean().transpose();
  return projection * mean + bias;
}

SpanReps all_span_representations(const Eigen::MatrixXd &word_vectors, const Eigen::MatrixXd &projection,
                                  const Eigen::VectorXd &bias) {
  const int n = static_cast<int>(word_vectors.rows());
  SpanReps reps(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 2; j <= n; ++j) reps.at(i, j) = span_representation(word_vectors, {i, j}, projection, bias);
  return reps;
}

double cosine(const Eigen::VectorXd &a, const Eigen::VectorXd &b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

Eigen::VectorXd cosine_grad_b(const Eigen::VectorXd &a, const Eigen::VectorXd &b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return Eigen::VectorXd::Zero(b.size());
  const double c = a.dot(b) / (na * nb);
  return a / (na * nb) - c * b / (nb * nb);
}

double expected_match_score(const Eigen::VectorXd &image, const PosteriorTable &posteriors, const SpanReps &reps) {
  const int n = posteriors.length();
  if (reps.length() != n) throw StructuralError("span representations and posteriors differ in length");
  double score = 0.0;
  for (int w = 2; w <= n; ++w)
    for (int i = 0; i + w <= n; ++i) {
      const Eigen::VectorXd &r = reps.at(i, i + w);
      if (r.size() != image.size()) throw StructuralError("image and span representation dimensions differ");
      score += posteriors.span_post.at(i, i + w) * cosine(image, r);
    }
  return score;
}

double hinge_loss(const Eigen::MatrixXd &scores, double margin) {
  if (scores.rows() != scores.cols()) throw StructuralError("score matrix must be square");
  const Eigen::Index b = scores.rows();
  if (b == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j) {
      if (i == j) continue;
      total += std::max(0.0, margin - scores(i, i) + scores(i, j));
      total += std::max(0.0, margin - scores(j, j) + scores(i, j));
    }
  return total / static_cast<double>(b);
}

Eigen::MatrixXd hinge_loss_grad(const Eigen::MatrixXd &scores, double margin) {
  if (scores.rows() != scores.cols()) throw StructuralError("score matrix must be square");
  const Eigen::Index b = scores.rows();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(b, b);
  if (b == 0) return g;
  const double unit = 1.0 / static_cast<double>(b);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j) {
      if (i == j) continue;
      if (margin - scores(i, i) + scores(i, j) > 0.0) {
        g(i, i) -= unit;
        g(i, j) += unit;
      }
      if (margin - scores(j, j) + scores(i, j) > 0.0) {
        g(j, j) -= unit;
        g(i, j) += unit;
      }
    }
  return g;
}

std::vector<ImageVector> read_image_vectors(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open image vector file: " + path);
  std::vector<ImageVector> out;
  std::string line;
  long line_no = 0;
  Eigen::Index dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(path + ":" + std::to_string(line_no) + ": missing tab separator");
    ImageVector img;
    img.id = line.substr(0, tab);
    std::vector<double> vals;
    std::stringstream fields(line.substr(tab + 1));
    std::string field;
    while (std::getline(fields, field, ',')) {
      char *end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (field.empty() || end != field.c_str() + field.size() || !std::isfinite(v))
        throw DataError(path + ":" + std::to_string(line_no) + ": bad number '" + field + "'");
      vals.push_back(v);
    }
    if (dim < 0) dim = static_cast<Eigen::Index>(vals.size());
    if (static_cast<Eigen::Index>(vals.size()) != dim || dim == 0)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) + " values");
    img.values = Eigen::Map<Eigen::VectorXd>(vals.data(), dim);
    out.push_back(std::move(img));
  }
  return out;
}

void write_image_vectors(const std::string &path, const std::vector<ImageVector> &images) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write image vector file: " + path);
  out.precision(17);
  for (const auto &img : images) {
    out << img.id << '\t';
    for (Eigen::Index k = 0; k < img.values.size(); ++k) out << (k ? "," : "") << img.values[k];
    out << '\n';
  }
}

std::vector<ImageVector> read_image_matrix(const std::string &matrix_path, const std::string &index_path) {
  std::ifstream bin(matrix_path, std::ios::binary);
  if (!bin) throw DataError("cannot open image matrix: " + matrix_path);
  std::uint64_t rows = 0, cols = 0;
  bin.read(reinterpret_cast<char *>(&rows), sizeof rows);
  bin.read(reinterpret_cast<char *>(&cols), sizeof cols);
  if (!bin) throw DataError("truncated image matrix header: " + matrix_path);
  std::ifstream idx(index_path);
  if (!idx) throw DataError("cannot open image index: " + index_path);
  std::vector<ImageVector> out;
  std::string id;
  for (std::uint64_t r = 0; r < rows; ++r) {
    if (!std::getline(idx, id)) throw DataError("image index has fewer ids than matrix rows");
    if (!id.empty() && id.back() == '\r') id.pop_back();
    ImageVector img{id, Eigen::VectorXd(static_cast<Eigen::Index>(cols))};
    bin.read(reinterpret_cast<char *>(img.values.data()), static_cast<std::streamsize>(cols * sizeof(double)));
    if (!bin) throw DataError("truncated image matrix at row " + std::to_string(r));
    out.push_back(std::move(img));
  }
  return out;
}

void write_image_matrix(const std::string &matrix_path, const std::string &index_path,
                        const std::vector<ImageVector> &images) {
  std::ofstream bin(matrix_path, std::ios::binary);
  std::ofstream idx(index_path);
  if (!bin || !idx) throw DataError("cannot write image matrix: " + matrix_path);
  const std::uint64_t rows = images.size();
  const std::uint64_t cols = images.empty() ? 0 : static_cast<std::uint64_t>(images[0].values.size());
  bin.write(reinterpret_cast<const char *>(&rows), sizeof rows);
  bin.write(reinterpret_cast<const char *>(&cols), sizeof cols);
  for (const auto &img : images) {
    if (static_cast<std::uint64_t>(img.values.size()) != cols) throw StructuralError("ragged image matrix");
    bin.write(reinterpret_cast<const char *>(img.values.data()), static_cast<std::streamsize>(cols * sizeof(double)));
    idx << img.id << '\n';
  }
}

}  // namespace pcfg
