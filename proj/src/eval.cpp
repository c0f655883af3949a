#include "csrae/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "csrae/rng.hpp"

namespace csrae::eval {

namespace {

constexpr std::size_t kRowBlock = 100;
constexpr std::size_t kSampleChunk = 50;

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  const double mx = std::max(a, b);
  return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

std::vector<std::size_t> block_rows(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx;
  for (std::size_t r = begin; r < end; ++r) idx.push_back(r);
  return idx;
}

// Eigen-decomposition of a symmetric matrix with a PSD check.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> psd_eigen(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw std::runtime_error(std::string(what) + ": eigensolver failed");
  if (es.eigenvalues().size() > 0 && es.eigenvalues().minCoeff() < -1e-8) {
    throw std::invalid_argument(std::string(what) + " is not positive semidefinite");
  }
  return es;
}

}  // namespace

std::vector<double> importance_sampled_ll(models::Autoencoder& model, const Matrix& x,
                                          const std::vector<Matrix>& eps) {
  ad::Tape tape;
  const ad::Value bound = models::iwae_bound(tape, model, x, eps);
  return bound.data().values();
}

std::vector<double> importance_sampled_ll(models::Autoencoder& model, const Matrix& x,
                                          std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw std::invalid_argument("importance_sampled_ll: S must be >= 1");
  const std::size_t d = model.encoder.latent_dim();
  std::vector<double> out;
  out.reserve(x.rows());
  for (std::size_t begin = 0, block = 0; begin < x.rows(); begin += kRowBlock, ++block) {
    const std::size_t end = std::min(x.rows(), begin + kRowBlock);
    const Matrix xb = x.select_rows(block_rows(begin, end));
    Rng rng(mix_seed(seed, block));
    std::vector<double> acc(xb.rows(), -std::numeric_limits<double>::infinity());
    for (std::size_t s0 = 0; s0 < samples; s0 += kSampleChunk) {
      const std::size_t chunk = std::min(kSampleChunk, samples - s0);
      std::vector<Matrix> eps;
      for (std::size_t s = 0; s < chunk; ++s) eps.push_back(rng.normal_matrix(xb.rows(), d));
      const std::vector<double> part = importance_sampled_ll(model, xb, eps);
      // part is a log-mean over `chunk` samples; turn it back into a log-sum.
      const double log_chunk = std::log(static_cast<double>(chunk));
      for (std::size_t r = 0; r < xb.rows(); ++r) acc[r] = log_add_exp(acc[r], part[r] + log_chunk);
    }
    for (double a : acc) out.push_back(a - std::log(static_cast<double>(samples)));
  }
  return out;
}

Matrix latent_embed(models::Autoencoder& model, const Matrix& x) {
  Matrix out(x.rows(), model.encoder.latent_dim());
  for (std::size_t begin = 0; begin < x.rows(); begin += 1000) {
    const std::size_t end = std::min(x.rows(), begin + 1000);
    ad::Tape tape;
    const auto q = model.encoder.encode(tape, model.params,
                                        tape.constant(x.select_rows(block_rows(begin, end))));
    for (std::size_t r = begin; r < end; ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = q.mean.data()(r - begin, c);
  }
  return out;
}

Matrix latent_embed_sampled(models::Autoencoder& model, const Matrix& x, std::uint64_t seed) {
  Matrix out(x.rows(), model.encoder.latent_dim());
  Rng rng(seed);
  ad::Tape tape;
  const auto q = model.encoder.encode(tape, model.params, tape.constant(x));
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      out(r, c) = q.mean.data()(r, c) + std::sqrt(q.var.data()(r, c)) * rng.normal();
  return out;
}

std::vector<int> knn_classify(const Matrix& train, std::span<const int> train_labels,
                              const Matrix& query, std::size_t k) {
  if (k == 0) throw std::invalid_argument("knn_classify: k must be >= 1");
  if (train_labels.size() != train.rows()) {
    throw std::invalid_argument("knn_classify: label count does not match training rows");
  }
  if (k > train.rows()) throw std::invalid_argument("knn_classify: k exceeds training size");
  if (query.cols() != train.cols()) throw std::invalid_argument("knn_classify: dimension mismatch");
  std::vector<int> out;
  out.reserve(query.rows());
  std::vector<std::pair<double, std::size_t>> dist(train.rows());
  for (std::size_t q = 0; q < query.rows(); ++q) {
    for (std::size_t i = 0; i < train.rows(); ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < train.cols(); ++c) {
        const double diff = query(q, c) - train(i, c);
        s += diff * diff;
      }
      dist[i] = {s, i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    struct Vote {
      std::size_t count = 0;
      double total = 0.0;
    };
    std::map<int, Vote> votes;
    for (std::size_t j = 0; j < k; ++j) {
      Vote& v = votes[train_labels[dist[j].second]];
      ++v.count;
      v.total += std::sqrt(dist[j].first);
    }
    // std::map iterates labels in increasing order, so strict comparisons keep
    // the smaller label on a full tie.
    int best = votes.begin()->first;
    const Vote* bv = &votes.begin()->second;
    for (const auto& [label, v] : votes) {
      const double mean = v.total / static_cast<double>(v.count);
      const double best_mean = bv->total / static_cast<double>(bv->count);
      if (v.count > bv->count || (v.count == bv->count && mean < best_mean)) {
        best = label;
        bv = &v;
      }
    }
    out.push_back(best);
  }
  return out;
}

double classification_error(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("classification_error: length mismatch");
  if (pred.empty()) throw std::invalid_argument("classification_error: empty input");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != truth[i];
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

double f1_score(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("f1_score: length mismatch");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && truth[i] == 1) ++tp;
    if (pred[i] == 1 && truth[i] != 1) ++fp;
    if (pred[i] != 1 && truth[i] == 1) ++fn;
  }
  const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

FeatureStats FeatureStats::fit(const Matrix& features) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (n < 2) throw std::invalid_argument("FeatureStats::fit: need at least two rows");
  FeatureStats s;
  s.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) s.mean[c] += features(r, c);
  for (double& m : s.mean) m /= static_cast<double>(n);
  s.cov = Matrix(d, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j)
        s.cov(i, j) += (features(r, i) - s.mean[i]) * (features(r, j) - s.mean[j]);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      s.cov(i, j) /= static_cast<double>(n - 1);
      s.cov(j, i) = s.cov(i, j);
    }
  }
  return s;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  const std::size_t d = a.mean.size();
  if (b.mean.size() != d || a.cov.rows() != d || a.cov.cols() != d || b.cov.rows() != d ||
      b.cov.cols() != d) {
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  }
  for (const Matrix* c : {&a.cov, &b.cov}) {
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j)
        if (std::abs((*c)(i, j) - (*c)(j, i)) > 1e-10) {
          throw std::invalid_argument("frechet_distance: covariance is not symmetric");
        }
  }
  const Eigen::MatrixXd ca = to_eigen(a.cov);
  const Eigen::MatrixXd cb = to_eigen(b.cov);
  const auto ea = psd_eigen(ca, "first covariance");
  psd_eigen(cb, "second covariance");
  const Eigen::VectorXd root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sa = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = sa * cb * sa;
  m = 0.5 * (m + m.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < em.eigenvalues().size(); ++i) {
    tr_sqrt += std::sqrt(std::max(0.0, em.eigenvalues()(i)));
  }
  double dm = 0.0;
  for (std::size_t i = 0; i < d; ++i) dm += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  return dm + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
}

double mean_nearest_distance(const Matrix& points, const Matrix& centers) {
  if (points.cols() != centers.cols() || centers.rows() == 0) {
    throw std::invalid_argument("mean_nearest_distance: shape mismatch");
  }
  if (points.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < points.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centers.rows(); ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < points.cols(); ++c) {
        const double diff = points(r, c) - centers(k, c);
        s += diff * diff;
      }
      best = std::min(best, s);
    }
    total += std::sqrt(best);
  }
  return total / static_cast<double>(points.rows());
}

}  // namespace csrae::eval
