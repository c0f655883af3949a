#pragma once

// Small models shared by the unit and acceptance tests.

#include <cmath>
#include <numbers>
#include <vector>

#include "csrae/models.hpp"
#include "csrae/rng.hpp"
#include "csrae/semisup.hpp"

namespace fixtures {

using csrae::Matrix;
namespace models = csrae::models;
namespace nn = csrae::nn;

/// 2-4-2 style autoencoder: data_dim -> 4 -> latent, latent -> 4 -> data_dim.
inline models::Autoencoder tiny_model(std::size_t data_dim, std::size_t latent_dim, models::PriorSpec prior,
                                      models::Likelihood lik, std::uint64_t seed) {
  models::AutoencoderSpec spec;
  spec.data_dim = data_dim;
  spec.latent_dim = latent_dim;
  spec.encoder_hidden = {{4, nn::Activation::kTanh}};
  spec.decoder_hidden = {{4, nn::Activation::kTanh}};
  spec.likelihood = lik;
  spec.prior = prior;
  spec.seed = seed;
  return models::build_autoencoder(spec);
}

inline models::PriorSpec mixture_prior(std::size_t k) {
  models::PriorSpec p;
  p.kind = models::PriorKind::kMixture;
  p.components = k;
  return p;
}

/// Perturbs every parameter so that biases and prior log-variances are not at
/// their symmetric initial values.
inline void jitter(csrae::ad::ParamStore& store, std::uint64_t seed, double scale = 0.3) {
  csrae::Rng rng(seed);
  for (auto& p : store)
    for (double& v : p.value.values()) v += scale * rng.normal();
}

inline Matrix uniform01(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  csrae::Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform();
  return m;
}

inline Matrix normal(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  csrae::Rng rng(seed);
  return rng.normal_matrix(rows, cols);
}

/// z ~ N(0, 1), x | z ~ N(a z + b, s2) with a linear encoder set to the exact
/// posterior N(v a (x - b) / s2, v), v = 1 / (1 + a^2 / s2).
struct Conjugate {
  double a = 1.5;
  double b = -0.5;
  double s2 = 0.4;
  models::Autoencoder model;

  double post_var() const { return 1.0 / (1.0 + a * a / s2); }
  double log_marginal(double x) const {
    const double var = a * a + s2;
    return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - b) * (x - b) / var;
  }
};

inline Conjugate conjugate_model(double a = 1.5, double b = -0.5, double s2 = 0.4) {
  Conjugate c{a, b, s2, {}};
  models::AutoencoderSpec spec;
  spec.data_dim = 1;
  spec.latent_dim = 1;
  spec.likelihood = models::Likelihood::kGaussian;
  c.model = models::build_autoencoder(spec);
  auto& ps = c.model.params;
  const double v = c.post_var();
  // encoder head: [mean | logvar]
  ps.get("encoder.0.W").value = Matrix::from_rows({{v * a / s2, 0.0}});
  ps.get("encoder.0.b").value = Matrix::from_rows({{-v * a * b / s2, std::log(v)}});
  // decoder head: [mean | logvar]
  ps.get("decoder.0.W").value = Matrix::from_rows({{a, 0.0}});
  ps.get("decoder.0.b").value = Matrix::from_rows({{b, std::log(s2)}});
  return c;
}

inline csrae::semisup::SemiSupModel tiny_semisup(std::size_t classes, std::size_t outputs, std::uint64_t seed,
                                                 models::PriorSpec prior = {}) {
  csrae::semisup::SemiSupSpec spec;
  spec.data_dim = 3;
  spec.latent_dim = 2;
  spec.classes = classes;
  spec.outputs = outputs;
  spec.encoder_hidden = {{4, nn::Activation::kTanh}};
  spec.decoder_hidden = {{4, nn::Activation::kTanh}};
  spec.classifier_hidden = {{4, nn::Activation::kTanh}};
  spec.likelihood = models::Likelihood::kGaussian;
  spec.prior = prior;
  spec.seed = seed;
  return csrae::semisup::build_semisup(spec);
}

}  // namespace fixtures
