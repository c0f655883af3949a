#include "csrae/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "csrae/rng.hpp"

namespace csrae::models {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)
constexpr double kLog4Pi = 2.5310242469692907;  // log(4 pi)

void require_finite_nonneg(double v, const char* what) {
  if (!std::isfinite(v) || v < 0.0) {
    throw std::invalid_argument(std::string(what) + " must be finite and >= 0");
  }
}

void check_noise(const Matrix& eps, const EncoderOutput& q) {
  if (eps.rows() != q.mean.rows() || eps.cols() != q.mean.cols()) {
    throw std::invalid_argument("noise shape " + eps.shape_string() + " does not match posterior " +
                                q.mean.data().shape_string());
  }
}

Matrix uniform_log_weights(std::size_t k) {
  return Matrix(1, k, -std::log(static_cast<double>(k)));
}

// K x K matrix of log w_k + log w_k'.
Matrix pair_log_weights(const Matrix& log_weights) {
  const std::size_t k = log_weights.cols();
  Matrix out(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) out(i, j) = log_weights[i] + log_weights[j];
  return out;
}

// Per-row -0.5 * sum_d (log 4pi + logvar): log N(mu | mu, 2 var).
ad::Value self_overlap(ad::Value logvar) {
  return ad::scale(ad::sum_rows(ad::add_scalar(logvar, kLog4Pi)), -0.5);
}

struct Forward {
  EncoderOutput q;
  ad::Value z;
  ad::Value ll;  // B x 1
};

Forward forward(ad::Tape& tape, Autoencoder& model, const Matrix& x, const Matrix& eps) {
  const ad::Value xv = tape.constant(x);
  EncoderOutput q = model.encoder.encode(tape, model.params, xv);
  check_noise(eps, q);
  const ad::Value z = reparameterize(q, tape.constant(eps));
  const ad::Value ll = model.decoder.log_likelihood(tape, model.params, z, xv);
  return {q, z, ll};
}

}  // namespace

Likelihood likelihood_from_string(const std::string& s) {
  if (s == "bernoulli") return Likelihood::kBernoulli;
  if (s == "gaussian") return Likelihood::kGaussian;
  throw std::invalid_argument("unknown likelihood '" + s + "'");
}

PriorKind prior_kind_from_string(const std::string& s) {
  if (s == "standard_normal" || s == "standard") return PriorKind::kStandardNormal;
  if (s == "mog" || s == "mixture") return PriorKind::kMixture;
  if (s == "vamp" || s == "vamp_data") return PriorKind::kVampData;
  throw std::invalid_argument("unknown prior '" + s + "'");
}

Objective objective_from_string(const std::string& s) {
  if (s == "elbo") return Objective::kElbo;
  if (s == "beta_vae") return Objective::kBetaVae;
  if (s == "iwae") return Objective::kIwae;
  if (s == "csrae") return Objective::kCsrae;
  if (s == "mixture_csrae") return Objective::kMixtureCsrae;
  throw std::invalid_argument("unknown objective '" + s + "'");
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::kElbo: return "elbo";
    case Objective::kBetaVae: return "beta_vae";
    case Objective::kIwae: return "iwae";
    case Objective::kCsrae: return "csrae";
    case Objective::kMixtureCsrae: return "mixture_csrae";
  }
  return "csrae";
}

// ---------------------------------------------------------------------------
// Encoder / decoder

MlpEncoder::MlpEncoder(ad::ParamStore& store, const std::string& prefix, std::size_t input_dim,
                       std::vector<nn::LayerSpec> hidden, std::size_t latent_dim,
                       std::uint64_t seed)
    : latent_dim_(latent_dim) {
  if (latent_dim == 0) throw std::invalid_argument("MlpEncoder: latent dimension must be >= 1");
  hidden.push_back({2 * latent_dim, nn::Activation::kIdentity});
  net_ = nn::Mlp(store, prefix, input_dim, std::move(hidden), seed);
}

EncoderOutput MlpEncoder::encode(ad::Tape& tape, ad::ParamStore& store, ad::Value x) const {
  const ad::Value out = net_.forward(tape, store, x);
  const Matrix& raw = out.data();
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    for (std::size_t c = 0; c < raw.cols(); ++c) {
      if (!std::isfinite(raw(r, c))) {
        throw std::runtime_error("encode: non-finite activation at batch index " +
                                 std::to_string(r));
      }
    }
  }
  EncoderOutput q;
  q.mean = ad::slice_cols(out, 0, latent_dim_);
  q.logvar = ad::clamp(ad::slice_cols(out, latent_dim_, latent_dim_), kLogVarMin, kLogVarMax);
  q.var = ad::exp(q.logvar);
  return q;
}

MlpDecoder::MlpDecoder(ad::ParamStore& store, const std::string& prefix, std::size_t input_dim,
                       std::vector<nn::LayerSpec> hidden, std::size_t data_dim,
                       Likelihood likelihood, std::uint64_t seed)
    : data_dim_(data_dim), likelihood_(likelihood) {
  if (data_dim == 0) throw std::invalid_argument("MlpDecoder: data dimension must be >= 1");
  const std::size_t head = likelihood == Likelihood::kGaussian ? 2 * data_dim : data_dim;
  hidden.push_back({head, nn::Activation::kIdentity});
  net_ = nn::Mlp(store, prefix, input_dim, std::move(hidden), seed);
}

ad::Value MlpDecoder::log_likelihood(ad::Tape& tape, ad::ParamStore& store, ad::Value z,
                                     ad::Value x) const {
  if (x.cols() != data_dim_) {
    throw std::invalid_argument("decoder: data width " + std::to_string(x.cols()) +
                                " != " + std::to_string(data_dim_));
  }
  const ad::Value out = net_.forward(tape, store, z);
  if (likelihood_ == Likelihood::kBernoulli) return bernoulli_ll(x, out);
  const ad::Value mean = ad::slice_cols(out, 0, data_dim_);
  const ad::Value logvar =
      ad::clamp(ad::slice_cols(out, data_dim_, data_dim_), kLogVarMin, kLogVarMax);
  return gaussian_ll(x, mean, logvar);
}

ad::Value MlpDecoder::mean(ad::Tape& tape, ad::ParamStore& store, ad::Value z) const {
  const ad::Value out = net_.forward(tape, store, z);
  if (likelihood_ == Likelihood::kBernoulli) return ad::sigmoid(out);
  return ad::slice_cols(out, 0, data_dim_);
}

// ---------------------------------------------------------------------------
// Priors

Prior Prior::standard_normal(std::size_t latent_dim) {
  if (latent_dim == 0) throw std::invalid_argument("prior: latent dimension must be >= 1");
  Prior p;
  p.kind_ = PriorKind::kStandardNormal;
  p.k_ = 1;
  p.latent_dim_ = latent_dim;
  return p;
}

Prior Prior::mixture(ad::ParamStore& store, const std::string& prefix, std::size_t k,
                     std::size_t latent_dim, std::uint64_t seed) {
  if (k == 0 || latent_dim == 0) throw std::invalid_argument("prior: K and D must be >= 1");
  Prior p;
  p.kind_ = PriorKind::kMixture;
  p.k_ = k;
  p.latent_dim_ = latent_dim;
  p.means_name_ = prefix + ".means";
  p.logvars_name_ = prefix + ".logvars";
  Rng rng(seed);
  store.add(p.means_name_, rng.normal_matrix(k, latent_dim));
  store.add(p.logvars_name_, Matrix(k, latent_dim));
  return p;
}

Prior Prior::fixed_mixture(Matrix means, Matrix vars) {
  if (means.rows() == 0 || means.cols() == 0 || !means.same_shape(vars)) {
    throw std::invalid_argument("prior: fixed mixture needs non-empty K x D means and vars");
  }
  for (double v : vars.values()) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("prior: variances must be > 0");
  }
  Prior p;
  p.kind_ = PriorKind::kMixture;
  p.k_ = means.rows();
  p.latent_dim_ = means.cols();
  p.fixed_means_ = std::move(means);
  p.fixed_vars_ = std::move(vars);
  return p;
}

Prior Prior::vamp_data(Matrix pseudo_inputs, std::size_t latent_dim) {
  if (pseudo_inputs.rows() == 0) throw std::invalid_argument("prior: no pseudo-inputs");
  Prior p;
  p.kind_ = PriorKind::kVampData;
  p.k_ = pseudo_inputs.rows();
  p.latent_dim_ = latent_dim;
  p.pseudo_inputs_ = std::move(pseudo_inputs);
  return p;
}

PriorComponents Prior::components(ad::Tape& tape, ad::ParamStore& store,
                                  const MlpEncoder& encoder) const {
  PriorComponents out;
  out.log_weights = tape.constant(uniform_log_weights(k_));
  switch (kind_) {
    case PriorKind::kStandardNormal:
      out.means = tape.constant(Matrix(1, latent_dim_, 0.0));
      out.vars = tape.constant(Matrix(1, latent_dim_, 1.0));
      break;
    case PriorKind::kMixture: {
      if (!trainable()) {
        out.means = tape.constant(fixed_means_);
        out.vars = tape.constant(fixed_vars_);
        break;
      }
      out.means = tape.param(store.get(means_name_));
      const ad::Value logvars =
          ad::clamp(tape.param(store.get(logvars_name_)), kLogVarMin, kLogVarMax);
      out.vars = ad::exp(logvars);
      break;
    }
    case PriorKind::kVampData: {
      const EncoderOutput q = encoder.encode(tape, store, tape.constant(pseudo_inputs_));
      out.means = q.mean;
      out.vars = q.var;
      break;
    }
  }
  return out;
}

gmm::DiagGMM Prior::to_gmm(ad::ParamStore& store, const MlpEncoder& encoder) const {
  ad::Tape tape;
  const PriorComponents pc = components(tape, store, encoder);
  const Matrix& m = pc.means.data();
  const Matrix& v = pc.vars.data();
  std::vector<gmm::DiagGaussian> comps;
  comps.reserve(m.rows());
  for (std::size_t k = 0; k < m.rows(); ++k) {
    auto mr = m.row_span(k);
    auto vr = v.row_span(k);
    comps.push_back(gmm::DiagGaussian::from_learned({mr.begin(), mr.end()}, {vr.begin(), vr.end()}));
  }
  return gmm::DiagGMM::uniform(std::move(comps));
}

Prior build_prior(ad::ParamStore& store, const PriorSpec& prior, std::size_t latent_dim,
                  std::size_t data_dim, std::uint64_t seed, const Matrix* training_features) {
  switch (prior.kind) {
    case PriorKind::kStandardNormal:
      return Prior::standard_normal(latent_dim);
    case PriorKind::kMixture: {
      const bool given = !prior.means.empty();
      if (given && (prior.means.rows() != prior.components ||
                    prior.means.cols() != latent_dim ||
                    !prior.means.same_shape(prior.vars))) {
        throw std::invalid_argument("mixture prior: means and vars must be K x latent_dim");
      }
      if (!prior.trainable) {
        if (!given) throw std::invalid_argument("mixture prior: a fixed prior needs means and vars");
        return Prior::fixed_mixture(prior.means, prior.vars);
      }
      Prior p = Prior::mixture(store, "prior", prior.components, latent_dim, mix_seed(seed, 3));
      if (given) {
        store.get("prior.means").value = prior.means;
        Matrix logvars = prior.vars;
        for (double& v : logvars.values()) {
          if (!(v > 0.0)) throw std::invalid_argument("mixture prior: variances must be > 0");
          v = std::log(v);
        }
        store.get("prior.logvars").value = logvars;
      }
      return p;
    }
    case PriorKind::kVampData: {
      if (training_features == nullptr) {
        throw std::invalid_argument("VampPrior needs training data for pseudo-inputs");
      }
      const std::size_t n = training_features->rows();
      const std::size_t k = prior.components;
      if (k == 0 || k > n) {
        throw std::invalid_argument("VampPrior: need 1 <= K <= number of training rows");
      }
      if (training_features->cols() != data_dim) {
        throw std::invalid_argument("VampPrior: training data width does not match data_dim");
      }
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      Rng rng(mix_seed(seed, 4));
      for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
      idx.resize(k);
      return Prior::vamp_data(training_features->select_rows(idx), latent_dim);
    }
  }
  throw std::invalid_argument("unknown prior kind");
}

Autoencoder build_autoencoder(const AutoencoderSpec& spec, const Matrix* training_features) {
  Autoencoder m;
  m.encoder = MlpEncoder(m.params, "encoder", spec.data_dim, spec.encoder_hidden, spec.latent_dim,
                         mix_seed(spec.seed, 1));
  m.decoder = MlpDecoder(m.params, "decoder", spec.latent_dim, spec.decoder_hidden, spec.data_dim,
                         spec.likelihood, mix_seed(spec.seed, 2));
  m.prior = build_prior(m.params, spec.prior, spec.latent_dim, spec.data_dim, spec.seed,
                        training_features);
  return m;
}

// ---------------------------------------------------------------------------
// Densities and divergences

ad::Value reparameterize(const EncoderOutput& q, ad::Value eps) {
  return ad::add(q.mean, ad::mul(ad::sqrt(q.var), eps));
}

ad::Value bernoulli_ll(ad::Value x, ad::Value logits) {
  for (double v : x.data().values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("bernoulli_ll: x outside [0, 1]");
  }
  // x*l - softplus(l) == x log sigmoid(l) + (1-x) log(1 - sigmoid(l))
  return ad::sum_rows(ad::sub(ad::mul(x, logits), ad::softplus(logits)));
}

ad::Value gaussian_ll(ad::Value x, ad::Value mean, ad::Value logvar) {
  const ad::Value diff = ad::sub(x, mean);
  const ad::Value mahal = ad::mul(ad::square(diff), ad::exp(ad::neg(logvar)));
  return ad::scale(ad::sum_rows(ad::add_scalar(ad::add(logvar, mahal), kLog2Pi)), -0.5);
}

ad::Value posterior_log_density(const EncoderOutput& q, ad::Value z) {
  const ad::Value mahal = ad::div(ad::square(ad::sub(z, q.mean)), q.var);
  return ad::scale(ad::sum_rows(ad::add_scalar(ad::add(q.logvar, mahal), kLog2Pi)), -0.5);
}

ad::Value prior_log_density(const PriorComponents& p, ad::Value z) {
  ad::Tape& tape = z.tape();
  const ad::Value zero_var = tape.constant(Matrix(z.rows(), z.cols(), 0.0));
  const ad::Value o = ad::pairwise_log_overlap(z, zero_var, p.means, p.vars);
  return ad::logsumexp_rows(ad::add(o, p.log_weights));
}

ad::Value kl_to_single_gaussian(const EncoderOutput& q, const PriorComponents& p) {
  if (p.size() != 1) {
    throw std::invalid_argument("KL is not available in closed form for a mixture prior");
  }
  // 0.5 * sum_d [log vp - log vq + (vq + (mq - mp)^2) / vp - 1]
  const ad::Value num = ad::add(q.var, ad::square(ad::sub(q.mean, p.means)));
  const ad::Value terms = ad::sub(ad::add(ad::log(p.vars), ad::div(num, p.vars)), q.logvar);
  return ad::scale(ad::sum_rows(ad::add_scalar(terms, -1.0)), 0.5);
}

ad::Value cs_to_mixture(const EncoderOutput& q, const PriorComponents& p) {
  ad::Tape& tape = q.mean.tape();
  const ad::Value cross = ad::logsumexp_rows(
      ad::add(ad::pairwise_log_overlap(q.mean, q.var, p.means, p.vars), p.log_weights));
  const ad::Value p_pairs = ad::pairwise_log_overlap(p.means, p.vars, p.means, p.vars);
  const ad::Value p_self = ad::logsumexp(
      ad::add(p_pairs, tape.constant(pair_log_weights(p.log_weights.data()))));
  return ad::add(ad::sub(ad::scale(self_overlap(q.logvar), 0.5), cross), ad::scale(p_self, 0.5));
}

ad::Value cs_to_uniform_mixture(const EncoderOutput& q, const PriorComponents& p) {
  const double expected = -std::log(static_cast<double>(p.size()));
  for (double w : p.log_weights.data().values()) {
    if (std::abs(w - expected) > 1e-12) {
      throw std::invalid_argument("cs_to_uniform_mixture: prior weights are not uniform");
    }
  }
  const ad::Value cross =
      ad::logsumexp_rows(ad::pairwise_log_overlap(q.mean, q.var, p.means, p.vars));
  const ad::Value repulsion =
      ad::logsumexp(ad::pairwise_log_overlap(p.means, p.vars, p.means, p.vars));
  return ad::add(ad::sub(ad::scale(self_overlap(q.logvar), 0.5), cross),
                 ad::scale(repulsion, 0.5));
}

ad::Value cs_divergence_mixtures(ad::Value q_means, ad::Value q_vars, const Matrix& q_log_weights,
                                 ad::Value p_means, ad::Value p_vars, const Matrix& p_log_weights) {
  ad::Tape& tape = q_means.tape();
  const std::size_t n = q_log_weights.cols();
  const std::size_t k = p_log_weights.cols();
  if (q_means.rows() != n || p_means.rows() != k) {
    throw std::invalid_argument("cs_divergence_mixtures: weight count does not match components");
  }
  Matrix cross_w(n, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) cross_w(i, j) = q_log_weights[i] + p_log_weights[j];
  const ad::Value cross = ad::logsumexp(
      ad::add(ad::pairwise_log_overlap(q_means, q_vars, p_means, p_vars), tape.constant(cross_w)));
  const ad::Value q_self = ad::logsumexp(ad::add(
      ad::pairwise_log_overlap(q_means, q_vars, q_means, q_vars),
      tape.constant(pair_log_weights(q_log_weights))));
  const ad::Value p_self = ad::logsumexp(ad::add(
      ad::pairwise_log_overlap(p_means, p_vars, p_means, p_vars),
      tape.constant(pair_log_weights(p_log_weights))));
  return ad::add(ad::sub(ad::scale(q_self, 0.5), cross), ad::scale(p_self, 0.5));
}

ad::Value cs_regularizer(ad::Tape& tape, Autoencoder& model, const EncoderOutput& q) {
  return cs_to_mixture(q, model.prior.components(tape, model.params, model.encoder));
}

// ---------------------------------------------------------------------------
// Objectives

LossTerms elbo_loss(ad::Tape& tape, Autoencoder& model, const Matrix& x, double beta,
                    const Matrix& eps) {
  require_finite_nonneg(beta, "beta");
  if (model.prior.size() != 1) {
    throw std::invalid_argument("elbo_loss: KL is not available in closed form for a mixture prior");
  }
  const Forward f = forward(tape, model, x, eps);
  const PriorComponents p = model.prior.components(tape, model.params, model.encoder);
  LossTerms t;
  t.reconstruction_error = ad::neg(ad::mean(f.ll));
  t.divergence = ad::mean(kl_to_single_gaussian(f.q, p));
  t.loss = ad::add(t.reconstruction_error, ad::scale(t.divergence, beta));
  return t;
}

ad::Value elbo_single_sample(ad::Tape& tape, Autoencoder& model, const Matrix& x,
                             const Matrix& eps) {
  const Forward f = forward(tape, model, x, eps);
  const PriorComponents p = model.prior.components(tape, model.params, model.encoder);
  return ad::sub(ad::add(f.ll, prior_log_density(p, f.z)), posterior_log_density(f.q, f.z));
}

ad::Value iwae_bound(ad::Tape& tape, Autoencoder& model, const Matrix& x,
                     const std::vector<Matrix>& eps) {
  if (eps.empty()) throw std::invalid_argument("iwae_bound: need at least one importance sample");
  const ad::Value xv = tape.constant(x);
  const EncoderOutput q = model.encoder.encode(tape, model.params, xv);
  const PriorComponents p = model.prior.components(tape, model.params, model.encoder);
  std::vector<ad::Value> log_w;
  log_w.reserve(eps.size());
  for (const Matrix& e : eps) {
    check_noise(e, q);
    const ad::Value z = reparameterize(q, tape.constant(e));
    const ad::Value ll = model.decoder.log_likelihood(tape, model.params, z, xv);
    log_w.push_back(ad::sub(ad::add(ll, prior_log_density(p, z)), posterior_log_density(q, z)));
  }
  const ad::Value all = log_w.size() == 1 ? log_w.front() : ad::concat_cols(log_w);
  return ad::add_scalar(ad::logsumexp_rows(all), -std::log(static_cast<double>(eps.size())));
}

LossTerms csrae_loss(ad::Tape& tape, Autoencoder& model, const Matrix& x, double lambda,
                     const Matrix& eps) {
  require_finite_nonneg(lambda, "lambda");
  const Forward f = forward(tape, model, x, eps);
  LossTerms t;
  t.reconstruction_error = ad::neg(ad::mean(f.ll));
  t.divergence = ad::mean(cs_regularizer(tape, model, f.q));
  t.loss = ad::add(t.reconstruction_error, ad::scale(t.divergence, lambda));
  return t;
}

LossTerms mixture_csrae_loss(ad::Tape& tape, Autoencoder& model, const Matrix& x,
                             double lambda, const Matrix& eps) {
  require_finite_nonneg(lambda, "lambda");
  const Forward f = forward(tape, model, x, eps);
  const PriorComponents p = model.prior.components(tape, model.params, model.encoder);
  LossTerms t;
  t.reconstruction_error = ad::neg(ad::mean(f.ll));
  t.divergence = ad::mean(cs_to_uniform_mixture(f.q, p));
  t.loss = ad::add(t.reconstruction_error, ad::scale(t.divergence, lambda));
  return t;
}

LossTerms objective_loss(ad::Tape& tape, Autoencoder& model, const LossConfig& config,
                         const Matrix& x, double weight, const std::vector<Matrix>& eps) {
  if (eps.empty()) throw std::invalid_argument("objective_loss: missing noise");
  switch (config.objective) {
    case Objective::kElbo:
    case Objective::kBetaVae:
      return elbo_loss(tape, model, x, weight, eps.front());
    case Objective::kCsrae:
      return csrae_loss(tape, model, x, weight, eps.front());
    case Objective::kMixtureCsrae:
      return mixture_csrae_loss(tape, model, x, weight, eps.front());
    case Objective::kIwae: {
      // Reported RE and divergence come from the first importance sample.
      const ad::Value xv = tape.constant(x);
      const EncoderOutput q = model.encoder.encode(tape, model.params, xv);
      const PriorComponents p = model.prior.components(tape, model.params, model.encoder);
      std::vector<ad::Value> log_w;
      LossTerms t;
      for (std::size_t s = 0; s < eps.size(); ++s) {
        check_noise(eps[s], q);
        const ad::Value z = reparameterize(q, tape.constant(eps[s]));
        const ad::Value ll = model.decoder.log_likelihood(tape, model.params, z, xv);
        const ad::Value gap = ad::sub(posterior_log_density(q, z), prior_log_density(p, z));
        if (s == 0) {
          t.reconstruction_error = ad::neg(ad::mean(ll));
          t.divergence = ad::mean(gap);
        }
        log_w.push_back(ad::sub(ll, gap));
      }
      const ad::Value all = log_w.size() == 1 ? log_w.front() : ad::concat_cols(log_w);
      const ad::Value bound =
          ad::add_scalar(ad::logsumexp_rows(all), -std::log(static_cast<double>(eps.size())));
      t.loss = ad::neg(ad::mean(bound));
      return t;
    }
  }
  throw std::invalid_argument("objective_loss: unknown objective");
}

double warmup_coefficient(double epoch, double warmup_epochs, double target) {
  if (!(warmup_epochs >= 0.0)) throw std::invalid_argument("warm-up epochs must be >= 0");
  if (warmup_epochs == 0.0) return target;
  return target * std::min(1.0, std::max(0.0, epoch) / warmup_epochs);
}

double model_selection_score(double reconstruction_error, double cs_divergence) {
  return reconstruction_error + cs_divergence;
}

// ---------------------------------------------------------------------------
// Quadrature check

DecompositionReport decomposition_check_1d(Autoencoder& model, std::span<const double> x,
                                           double lambda, const gmm::QuadratureSpec& grid) {
  grid.validate();
  if (model.encoder.latent_dim() != 1) {
    throw std::invalid_argument("decomposition_check_1d: latent dimension must be 1");
  }
  const Matrix xrow = Matrix::row(x);
  const gmm::DiagGaussian q = posterior_gaussians(model, xrow).front();
  const gmm::DiagGMM prior = model.prior.to_gmm(model.params, model.encoder);

  const std::size_t n = grid.panels + 1;
  const double h = (grid.upper - grid.lower) / static_cast<double>(grid.panels);
  auto covered = [&](const gmm::DiagGaussian& g) {
    const double sd = std::sqrt(g.var()[0]);
    return g.mean()[0] - 8.0 * sd >= grid.lower && g.mean()[0] + 8.0 * sd <= grid.upper &&
           h <= 0.25 * sd;
  };
  bool ok = covered(q);
  for (const auto& c : prior.components()) ok = ok && covered(c);
  if (!ok) throw std::invalid_argument("decomposition_check_1d: grid coverage insufficient");

  Matrix zs(n, 1);
  std::vector<double> log_w(n);
  for (std::size_t i = 0; i < n; ++i) {
    zs(i, 0) = grid.lower + h * static_cast<double>(i);
    const double simpson = (i == 0 || i == n - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    log_w[i] = std::log(simpson * h / 3.0);
  }
  std::vector<double> ll(n);
  {
    Matrix xs(n, xrow.cols());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < xrow.cols(); ++d) xs(i, d) = xrow[d];
    ad::Tape tape;
    const ad::Value l =
        model.decoder.log_likelihood(tape, model.params, tape.constant(zs), tape.constant(xs));
    for (std::size_t i = 0; i < n; ++i) ll[i] = l.data()[i];
  }
  std::vector<double> lq(n), lp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = zs(i, 0);
    lq[i] = gmm::log_pdf(q, std::span<const double>(&z, 1));
    lp[i] = gmm::log_pdf(prior, std::span<const double>(&z, 1));
  }
  auto log_integral = [&](auto&& f) {
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = log_w[i] + f(i);
      mx = std::max(mx, t[i]);
    }
    double s = 0.0;
    for (double v : t) s += std::exp(v - mx);
    return mx + std::log(s);
  };
  auto q_expect = [&](auto&& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(log_w[i] + lq[i]) * f(i);
    return s;
  };

  DecompositionReport r{};
  r.log_marginal = log_integral([&](std::size_t i) { return ll[i] + lp[i]; });
  r.kl_posterior =
      q_expect([&](std::size_t i) { return lq[i] - (ll[i] + lp[i] - r.log_marginal); });
  r.kl_prior = q_expect([&](std::size_t i) { return lq[i] - lp[i]; });
  r.reconstruction = q_expect([&](std::size_t i) { return ll[i]; });
  r.cs_quadrature = -log_integral([&](std::size_t i) { return lq[i] + lp[i]; }) +
                    0.5 * log_integral([&](std::size_t i) { return 2.0 * lq[i]; }) +
                    0.5 * log_integral([&](std::size_t i) { return 2.0 * lp[i]; });
  r.cs_closed_form = gmm::cs_divergence(gmm::DiagGMM::single(q), prior);
  r.objective = r.reconstruction - lambda * r.cs_closed_form;
  r.elbo = r.reconstruction - r.kl_prior;
  r.residual = std::abs(r.objective - (r.log_marginal - r.kl_posterior + r.kl_prior -
                                       lambda * r.cs_quadrature));
  return r;
}

std::vector<gmm::DiagGaussian> posterior_gaussians(Autoencoder& model, const Matrix& x) {
  ad::Tape tape;
  const EncoderOutput q = model.encoder.encode(tape, model.params, tape.constant(x));
  std::vector<gmm::DiagGaussian> out;
  out.reserve(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto m = q.mean.data().row_span(r);
    auto v = q.var.data().row_span(r);
    out.emplace_back(std::vector<double>(m.begin(), m.end()), std::vector<double>(v.begin(), v.end()));
  }
  return out;
}

}  // namespace csrae::models
