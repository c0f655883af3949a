#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csrae/autodiff.hpp"
#include "csrae/gmm.hpp"
#include "csrae/nn.hpp"

namespace csrae::models {

/// Encoder log-variances are clamped so that variances stay in [1e-8, 1e8].
inline const double kLogVarMin = std::log(1e-8);
inline const double kLogVarMax = std::log(1e8);

enum class Likelihood { kBernoulli, kGaussian };
enum class PriorKind { kStandardNormal, kMixture, kVampData };
enum class Objective { kElbo, kBetaVae, kIwae, kCsrae, kMixtureCsrae };

Likelihood likelihood_from_string(const std::string& s);
PriorKind prior_kind_from_string(const std::string& s);
Objective objective_from_string(const std::string& s);
std::string to_string(Objective o);

/// Posterior parameters of q(z|x) = N(mean, diag(var)) for each row of a batch.
struct EncoderOutput {
  ad::Value mean;    // B x D
  ad::Value logvar;  // B x D, clamped
  ad::Value var;     // B x D, exp(logvar)
};

class MlpEncoder {
 public:
  MlpEncoder() = default;
  /// `hidden` is the trunk; a linear layer of width 2*latent_dim follows and is
  /// split into the mean and log-variance heads.
  MlpEncoder(ad::ParamStore& store, const std::string& prefix, std::size_t input_dim,
             std::vector<nn::LayerSpec> hidden, std::size_t latent_dim, std::uint64_t seed);

  /// Throws std::runtime_error naming the batch row if any output is non-finite.
  EncoderOutput encode(ad::Tape& tape, ad::ParamStore& store, ad::Value x) const;

  std::size_t input_dim() const { return net_.input_dim(); }
  std::size_t latent_dim() const { return latent_dim_; }
  const nn::Mlp& network() const { return net_; }

 private:
  nn::Mlp net_;
  std::size_t latent_dim_ = 0;
};

class MlpDecoder {
 public:
  MlpDecoder() = default;
  /// Output head: data_dim logits (Bernoulli) or data_dim means followed by
  /// data_dim log-variances (Gaussian).
  MlpDecoder(ad::ParamStore& store, const std::string& prefix, std::size_t input_dim,
             std::vector<nn::LayerSpec> hidden, std::size_t data_dim, Likelihood likelihood,
             std::uint64_t seed);

  /// Per-row log p(x | z), shape B x 1.
  ad::Value log_likelihood(ad::Tape& tape, ad::ParamStore& store, ad::Value z, ad::Value x) const;
  /// Decoder mean: sigmoid(logits) or the Gaussian mean.
  ad::Value mean(ad::Tape& tape, ad::ParamStore& store, ad::Value z) const;

  std::size_t input_dim() const { return net_.input_dim(); }
  std::size_t data_dim() const { return data_dim_; }
  Likelihood likelihood() const { return likelihood_; }

 private:
  nn::Mlp net_;
  std::size_t data_dim_ = 0;
  Likelihood likelihood_ = Likelihood::kBernoulli;
};

/// Prior components on a tape. log_weights is 1 x K.
struct PriorComponents {
  ad::Value means;        // K x D
  ad::Value vars;         // K x D
  ad::Value log_weights;  // 1 x K
  std::size_t size() const { return means.rows(); }
};

class Prior {
 public:
  Prior() = default;

  static Prior standard_normal(std::size_t latent_dim);
  /// Trainable means (drawn from N(0, I)) and log-variances (initialized at 0),
  /// weights fixed at 1/K. Parameters "<prefix>.means" and "<prefix>.logvars".
  static Prior mixture(ad::ParamStore& store, const std::string& prefix, std::size_t k,
                       std::size_t latent_dim, std::uint64_t seed);
  /// Mixture with fixed means and variances (K x D each), weights 1/K. Nothing
  /// is added to the parameter store.
  static Prior fixed_mixture(Matrix means, Matrix vars);
  /// Components are the encoder posteriors at fixed pseudo-inputs (K x data_dim).
  static Prior vamp_data(Matrix pseudo_inputs, std::size_t latent_dim);

  PriorComponents components(ad::Tape& tape, ad::ParamStore& store,
                             const MlpEncoder& encoder) const;
  /// Current prior as a mixture of plain Gaussians.
  gmm::DiagGMM to_gmm(ad::ParamStore& store, const MlpEncoder& encoder) const;

  PriorKind kind() const { return kind_; }
  std::size_t size() const { return k_; }
  std::size_t latent_dim() const { return latent_dim_; }
  const Matrix& pseudo_inputs() const { return pseudo_inputs_; }
  bool trainable() const { return !means_name_.empty(); }

 private:
  PriorKind kind_ = PriorKind::kStandardNormal;
  std::size_t k_ = 1;
  std::size_t latent_dim_ = 0;
  std::string means_name_;
  std::string logvars_name_;
  Matrix pseudo_inputs_;
  Matrix fixed_means_;
  Matrix fixed_vars_;
};

struct PriorSpec {
  PriorKind kind = PriorKind::kStandardNormal;
  std::size_t components = 1;
  /// Mixture only: optional K x D initial means and variances. With
  /// trainable = false both must be given and stay fixed.
  Matrix means;
  Matrix vars;
  bool trainable = true;
};

struct AutoencoderSpec {
  std::size_t data_dim = 2;
  std::size_t latent_dim = 2;
  std::vector<nn::LayerSpec> encoder_hidden;
  std::vector<nn::LayerSpec> decoder_hidden;
  Likelihood likelihood = Likelihood::kGaussian;
  PriorSpec prior;
  std::uint64_t seed = 0;
};

/// Encoder, decoder and prior sharing one parameter store.
struct Autoencoder {
  ad::ParamStore params;
  MlpEncoder encoder;
  MlpDecoder decoder;
  Prior prior;
};

/// Prior per spec. Mixture parameters are added to `store` under "prior.*" with
/// seed mix_seed(seed, 3); VampPrior pseudo-inputs are drawn from
/// `training_features` with seed mix_seed(seed, 4).
Prior build_prior(ad::ParamStore& store, const PriorSpec& spec, std::size_t latent_dim,
                  std::size_t data_dim, std::uint64_t seed, const Matrix* training_features);

/// VampPrior pseudo-inputs are drawn (seeded) from `training_features` rows.
Autoencoder build_autoencoder(const AutoencoderSpec& spec,
                              const Matrix* training_features = nullptr);

/// Per-objective scalar terms. reconstruction_error is the batch mean of
/// -E_q[log p(x|z)], divergence the unweighted batch mean of KL or CS.
struct LossTerms {
  ad::Value loss;
  ad::Value reconstruction_error;
  ad::Value divergence;
};

ad::Value reparameterize(const EncoderOutput& q, ad::Value eps);

/// sum_d [x log sigmoid(l) + (1 - x) log(1 - sigmoid(l))] per row (B x 1).
ad::Value bernoulli_ll(ad::Value x, ad::Value logits);
/// Diagonal Gaussian log density per row (B x 1).
ad::Value gaussian_ll(ad::Value x, ad::Value mean, ad::Value logvar);

/// log q(z|x) per row.
ad::Value posterior_log_density(const EncoderOutput& q, ad::Value z);
/// log p(z) per row for a (weighted) Gaussian mixture prior.
ad::Value prior_log_density(const PriorComponents& p, ad::Value z);

/// Closed-form KL(q || p) per row; the prior must have one component.
ad::Value kl_to_single_gaussian(const EncoderOutput& q, const PriorComponents& p);
/// Closed-form CS divergence per row against a weighted mixture prior.
ad::Value cs_to_mixture(const EncoderOutput& q, const PriorComponents& p);
/// CS divergence per row against a uniformly weighted mixture, written as the
/// expanded MixtureCSRAE regularizer
///   -log sum_k N(mu | mu_k, s^2 + s_k^2) + 0.5 log N(mu | mu, 2 s^2)
///   + 0.5 log sum_{k,k'} N(mu_k | mu_k', s_k^2 + s_k'^2).
/// The log K terms cancel once both self terms carry their 0.5.
ad::Value cs_to_uniform_mixture(const EncoderOutput& q, const PriorComponents& p);

/// Closed-form CS divergence (1x1) between two weighted diagonal mixtures whose
/// components live on a tape. Log-weights are fixed row vectors.
ad::Value cs_divergence_mixtures(ad::Value q_means, ad::Value q_vars, const Matrix& q_log_weights,
                                 ad::Value p_means, ad::Value p_vars, const Matrix& p_log_weights);

/// Negative beta-ELBO with closed-form KL. Throws for multi-component priors.
LossTerms elbo_loss(ad::Tape& tape, Autoencoder& model, const Matrix& x, double beta,
                    const Matrix& eps);
/// Single-sample ELBO estimate log p(x|z) + log p(z) - log q(z|x) per row.
ad::Value elbo_single_sample(ad::Tape& tape, Autoencoder& model, const Matrix& x,
                             const Matrix& eps);
/// Importance-weighted bound per row, one eps matrix (B x D) per importance sample.
ad::Value iwae_bound(ad::Tape& tape, Autoencoder& model, const Matrix& x,
                     const std::vector<Matrix>& eps);
LossTerms csrae_loss(ad::Tape& tape, Autoencoder& model, const Matrix& x, double lambda,
                     const Matrix& eps);
/// Same value as csrae_loss, computed through cs_to_uniform_mixture.
LossTerms mixture_csrae_loss(ad::Tape& tape, Autoencoder& model, const Matrix& x,
                             double lambda, const Matrix& eps);

struct LossConfig {
  Objective objective = Objective::kCsrae;
  double lambda = 1.0;
  double beta = 1.0;
  std::size_t importance_samples = 1;
  std::size_t warmup_epochs = 0;
};

/// Dispatches on config.objective. `weight` replaces lambda (or beta) so callers
/// can apply warm-up. eps holds importance_samples matrices for IWAE, one otherwise.
LossTerms objective_loss(ad::Tape& tape, Autoencoder& model, const LossConfig& config,
                         const Matrix& x, double weight, const std::vector<Matrix>& eps);

/// Unweighted CS divergence per row between q(z|x) and the model prior.
ad::Value cs_regularizer(ad::Tape& tape, Autoencoder& model, const EncoderOutput& q);

double warmup_coefficient(double epoch, double warmup_epochs, double target);

/// Reconstruction error (negative log-likelihood) plus unweighted CS divergence;
/// lower is better.
double model_selection_score(double reconstruction_error, double cs_divergence);

struct DecompositionReport {
  double log_marginal;     // log p(x)
  double kl_posterior;     // KL(q(z|x) || p(z|x))
  double kl_prior;         // KL(q(z|x) || p(z))
  double cs_quadrature;    // CS(q || p(z)) by quadrature
  double cs_closed_form;   // CS(q || p(z)) in closed form
  double reconstruction;   // E_q[log p(x|z)] by quadrature
  double objective;        // reconstruction - lambda * cs_closed_form
  double elbo;             // reconstruction - kl_prior
  double residual;         // |objective - (log p(x) - KL_post + KL_prior - lambda CS)|
};

/// Verifies the CSRAE objective decomposition for a one-dimensional latent by
/// quadrature over `grid`. `x` is a single data row.
DecompositionReport decomposition_check_1d(Autoencoder& model, std::span<const double> x,
                                           double lambda, const gmm::QuadratureSpec& grid);

/// Encoder posteriors as plain Gaussians, one per row of x.
std::vector<gmm::DiagGaussian> posterior_gaussians(Autoencoder& model, const Matrix& x);

}  // namespace csrae::models
