#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "csrae/matrix.hpp"

namespace csrae::gmm {

/// Smallest variance admitted when a Gaussian is built from learned parameters.
inline constexpr double kVarianceFloor = 1e-8;

/// Axis-aligned Gaussian N(mean, diag(var)).
class DiagGaussian {
 public:
  DiagGaussian(std::vector<double> mean, std::vector<double> var);

  /// Builds from unconstrained parameters, flooring the variance at kVarianceFloor.
  static DiagGaussian from_learned(std::vector<double> mean, std::vector<double> var);
  static DiagGaussian standard(std::size_t dim);

  std::size_t dim() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& var() const { return var_; }

 private:
  std::vector<double> mean_;
  std::vector<double> var_;
};

/// Mixture of diagonal Gaussians with simplex weights.
class DiagGMM {
 public:
  DiagGMM(std::vector<double> weights, std::vector<DiagGaussian> components);

  static DiagGMM single(DiagGaussian g);
  static DiagGMM uniform(std::vector<DiagGaussian> components);

  std::size_t size() const { return components_.size(); }
  std::size_t dim() const { return components_.front().dim(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<DiagGaussian>& components() const { return components_; }
  const DiagGaussian& component(std::size_t k) const { return components_.at(k); }

 private:
  std::vector<double> weights_;
  std::vector<DiagGaussian> components_;
};

/// Composite Simpson integration range for the 1D oracle.
struct QuadratureSpec {
  double lower = -40.0;
  double upper = 40.0;
  std::size_t panels = 20000;

  void validate() const;
};

double log_pdf(const DiagGaussian& g, std::span<const double> x);
double log_pdf(const DiagGMM& p, std::span<const double> x);

/// log N(mean_a | mean_b, diag(var_a + var_b)), i.e. the log of the integral of
/// the product of the two densities.
double gaussian_overlap(const DiagGaussian& a, const DiagGaussian& b);

struct GaussianProduct {
  double log_scale;
  DiagGaussian result;
};

/// N(x|a) N(x|b) = exp(log_scale) N(x|result).
GaussianProduct product_of_gaussians(const DiagGaussian& a, const DiagGaussian& b);

/// log of the integral of q(x) p(x) over R^D, evaluated with log-sum-exp.
double log_inner_product(const DiagGMM& q, const DiagGMM& p);

/// Closed-form Cauchy-Schwarz divergence
///   -log <q,p> + 0.5 log <q,q> + 0.5 log <p,p>.
double cs_divergence(const DiagGMM& q, const DiagGMM& p);

double kl_diag_gaussians(const DiagGaussian& q, const DiagGaussian& p);

/// Monte-Carlo estimate of KL(q || p) with samples drawn from q.
double mc_kl(const DiagGMM& q, const DiagGMM& p, std::size_t samples, std::uint64_t seed);

/// Simpson-rule evaluation of the three integrals of the CS divergence (1D only).
double cs_divergence_quadrature_1d(const DiagGMM& q, const DiagGMM& p,
                                   const QuadratureSpec& spec);

/// Integration range covering every component mean +/- 10 of the largest std.
QuadratureSpec default_quadrature(const DiagGMM& q, const DiagGMM& p,
                                  std::size_t panels = 20000);

struct GmmSamples {
  Matrix points;                      // n x D
  std::vector<std::size_t> components;  // generating component per row
};

/// Ancestral sampling; with `component` set, only that component is used.
GmmSamples sample_gmm(const DiagGMM& p, std::size_t n, std::uint64_t seed,
                      std::optional<std::size_t> component = std::nullopt);

}  // namespace csrae::gmm
