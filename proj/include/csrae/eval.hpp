#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "csrae/matrix.hpp"
#include "csrae/models.hpp"

namespace csrae::eval {

/// Per-row importance-sampled log p(x) with S proposals from q(z|x).
std::vector<double> importance_sampled_ll(models::Autoencoder& model, const Matrix& x,
                                          std::size_t samples, std::uint64_t seed);

/// Same estimator with caller-supplied noise, one B x D matrix per sample.
std::vector<double> importance_sampled_ll(models::Autoencoder& model, const Matrix& x,
                                          const std::vector<Matrix>& eps);

/// Posterior means; the sampled variant draws one reparameterized z per row.
Matrix latent_embed(models::Autoencoder& model, const Matrix& x);
Matrix latent_embed_sampled(models::Autoencoder& model, const Matrix& x, std::uint64_t seed);

/// Euclidean k-nearest-neighbour majority vote. Neighbours are ordered by
/// (distance, training index); vote ties go to the label with the smaller mean
/// neighbour distance, then the smaller label.
std::vector<int> knn_classify(const Matrix& train, std::span<const int> train_labels,
                              const Matrix& query, std::size_t k);

double classification_error(std::span<const int> pred, std::span<const int> truth);
/// Binary F1 with 1 as the positive class; 0 when precision + recall is 0.
double f1_score(std::span<const int> pred, std::span<const int> truth);

/// Gaussian fitted to a feature matrix (unbiased covariance).
struct FeatureStats {
  std::vector<double> mean;
  Matrix cov;

  static FeatureStats fit(const Matrix& features);
};

/// ||m_a - m_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^{1/2}). The square root trace is
/// taken from the eigenvalues of the symmetric product C_a^{1/2} C_b C_a^{1/2}.
/// Throws on asymmetric covariances or eigenvalues below -1e-8.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

/// Mean Euclidean distance from each row of `points` to its nearest row of `centers`.
double mean_nearest_distance(const Matrix& points, const Matrix& centers);

}  // namespace csrae::eval
