#include <cmath>
#include <numbers>
#include <stdexcept>

#include "../common/fixtures.hpp"
#include "csrae/gmm.hpp"
#include "csrae/models.hpp"
#include "doctest.h"

using namespace csrae;
using namespace csrae::models;
using fixtures::tiny_model;

namespace {

gmm::DiagGMM as_gmm(const PriorComponents& p) {
  std::vector<gmm::DiagGaussian> comps;
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto m = p.means.data().row_span(k);
    auto v = p.vars.data().row_span(k);
    comps.emplace_back(std::vector<double>(m.begin(), m.end()), std::vector<double>(v.begin(), v.end()));
  }
  return gmm::DiagGMM::uniform(comps);
}

void zero_all(ad::ParamStore& s) {
  for (auto& p : s) p.value.fill(0.0);
}

}  // namespace

TEST_CASE("string parsers") {
  CHECK(objective_from_string("mixture_csrae") == Objective::kMixtureCsrae);
  CHECK(objective_from_string(to_string(Objective::kIwae)) == Objective::kIwae);
  CHECK(prior_kind_from_string("vamp") == PriorKind::kVampData);
  CHECK(likelihood_from_string("bernoulli") == Likelihood::kBernoulli);
  CHECK_THROWS_AS(objective_from_string("vae++"), std::invalid_argument);
  CHECK_THROWS_AS(prior_kind_from_string("flow"), std::invalid_argument);
}

TEST_CASE("encoder with zero weights gives the standard normal") {
  auto m = tiny_model(3, 2, {}, Likelihood::kGaussian, 1);
  zero_all(m.params);
  ad::Tape t;
  const EncoderOutput q = m.encoder.encode(t, m.params, t.constant(Matrix(5, 3, 0.7)));
  CHECK(q.mean.rows() == 5);
  CHECK(q.mean.cols() == 2);
  CHECK(q.logvar.cols() == 2);
  for (double v : q.mean.data().values()) CHECK(v == 0.0);
  for (double v : q.var.data().values()) CHECK(v == 1.0);
}

TEST_CASE("encoder is deterministic and clamps the log-variance") {
  auto m = tiny_model(3, 2, {}, Likelihood::kGaussian, 1);
  const Matrix x = fixtures::normal(4, 3, 2);
  ad::Tape t1, t2;
  CHECK(m.encoder.encode(t1, m.params, t1.constant(x)).mean.data() ==
        m.encoder.encode(t2, m.params, t2.constant(x)).mean.data());
  m.params.get("encoder.1.b").value = Matrix::from_rows({{0.0, 0.0, 100.0, -100.0}});
  ad::Tape t3;
  const auto q = m.encoder.encode(t3, m.params, t3.constant(x));
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(q.logvar.data()(r, 0) == doctest::Approx(kLogVarMax));
    CHECK(q.logvar.data()(r, 1) == doctest::Approx(kLogVarMin));
  }
}

TEST_CASE("encoder reports the row of a non-finite activation") {
  auto m = tiny_model(2, 1, {}, Likelihood::kGaussian, 1);
  Matrix x(3, 2, 0.0);
  x(2, 0) = std::numeric_limits<double>::quiet_NaN();
  ad::Tape t;
  CHECK_THROWS_WITH(m.encoder.encode(t, m.params, t.constant(x)), doctest::Contains("batch index 2"));
}

TEST_CASE("reparameterize") {
  ad::Tape t;
  EncoderOutput q;
  q.mean = t.variable(Matrix::from_rows({{1.5, -2.0}}));
  q.logvar = t.constant(Matrix::from_rows({{std::log(0.25), 0.0}}));
  q.var = ad::exp(q.logvar);
  const ad::Value z0 = reparameterize(q, t.constant(Matrix(1, 2, 0.0)));
  CHECK(z0.data() == q.mean.data());
  t.backward(ad::sum(reparameterize(q, t.constant(Matrix::from_rows({{0.3, -1.0}})))));
  CHECK(q.mean.grad()(0, 0) == 1.0);
  CHECK(q.mean.grad()(0, 1) == 1.0);

  Rng rng(4);
  const std::size_t n = 100000;
  ad::Tape t2;
  EncoderOutput q2;
  q2.mean = t2.constant(Matrix(n, 1, 0.7));
  q2.logvar = t2.constant(Matrix(n, 1, std::log(2.0)));
  q2.var = ad::exp(q2.logvar);
  const Matrix z = reparameterize(q2, t2.constant(rng.normal_matrix(n, 1))).data();
  double mean = 0.0, var = 0.0;
  for (double v : z.values()) mean += v;
  mean /= n;
  for (double v : z.values()) var += (v - mean) * (v - mean);
  var /= n - 1;
  CHECK(mean == doctest::Approx(0.7).epsilon(0.02));
  CHECK(var == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("bernoulli_ll") {
  ad::Tape t;
  CHECK(bernoulli_ll(t.constant(Matrix::scalar(1.0)), t.constant(Matrix::scalar(0.0))).item() ==
        doctest::Approx(std::log(0.5)));
  CHECK(bernoulli_ll(t.constant(Matrix::scalar(1.0)), t.constant(Matrix::scalar(800.0))).item() ==
        doctest::Approx(0.0));
  Matrix x(1, 784), logits(1, 784);
  for (std::size_t i = 0; i < 784; ++i) {
    x[i] = i % 2;
    logits[i] = i % 2 ? 50.0 : -50.0;
  }
  const double ll = bernoulli_ll(t.constant(x), t.constant(logits)).item();
  CHECK(std::isfinite(ll));
  CHECK(ll < 0.0);
  CHECK(ll > -1e-18);
  CHECK_THROWS(bernoulli_ll(t.constant(Matrix::scalar(1.5)), t.constant(Matrix::scalar(0.0))));
}

TEST_CASE("gaussian_ll matches the density") {
  ad::Tape t;
  const double ll = gaussian_ll(t.constant(Matrix::from_rows({{1.0, -1.0}})),
                                t.constant(Matrix::from_rows({{0.5, 0.0}})),
                                t.constant(Matrix::from_rows({{std::log(2.0), 0.0}})))
                        .item();
  const double x1[] = {1.0, -1.0};
  CHECK(ll == doctest::Approx(gmm::log_pdf(gmm::DiagGaussian({0.5, 0.0}, {2.0, 1.0}), x1)).epsilon(1e-14));
}

TEST_CASE("closed-form KL and CS per row match gmm_core") {
  auto m = tiny_model(3, 2, fixtures::mixture_prior(1), Likelihood::kGaussian, 5);
  fixtures::jitter(m.params, 6);
  const Matrix x = fixtures::normal(6, 3, 7);
  ad::Tape t;
  const EncoderOutput q = m.encoder.encode(t, m.params, t.constant(x));
  const PriorComponents p = m.prior.components(t, m.params, m.encoder);
  const auto post = posterior_gaussians(m, x);
  const ad::Value kl = kl_to_single_gaussian(q, p);
  const ad::Value cs = cs_to_mixture(q, p);
  for (std::size_t r = 0; r < 6; ++r) {
    CHECK(kl.data()[r] == doctest::Approx(gmm::kl_diag_gaussians(post[r], as_gmm(p).component(0))).epsilon(1e-12));
    CHECK(cs.data()[r] ==
          doctest::Approx(gmm::cs_divergence(gmm::DiagGMM::single(post[r]), as_gmm(p))).epsilon(1e-12));
  }
}

TEST_CASE("elbo_loss") {
  auto m = tiny_model(3, 2, {}, Likelihood::kGaussian, 8);
  const Matrix x = fixtures::normal(5, 3, 9);
  const Matrix eps = fixtures::normal(5, 2, 10);
  ad::Tape t;
  const LossTerms b0 = elbo_loss(t, m, x, 0.0, eps);
  CHECK(b0.loss.item() == b0.reconstruction_error.item());
  ad::Tape t2;
  const LossTerms b2 = elbo_loss(t2, m, x, 2.0, eps);
  CHECK(b2.loss.item() == doctest::Approx(b2.reconstruction_error.item() + 2.0 * b2.divergence.item()));

  // posterior equal to the prior: KL is zero
  zero_all(m.params);
  ad::Tape t3;
  CHECK(std::abs(elbo_loss(t3, m, x, 1.0, eps).divergence.item()) < 1e-15);

  auto mix = tiny_model(3, 2, fixtures::mixture_prior(3), Likelihood::kGaussian, 8);
  ad::Tape t4;
  CHECK_THROWS(elbo_loss(t4, mix, x, 1.0, eps));
  ad::Tape t5;
  CHECK_THROWS(elbo_loss(t5, m, x, -1.0, eps));
  ad::Tape t6;
  CHECK_THROWS(elbo_loss(t6, m, x, 1.0, Matrix(5, 3)));
}

TEST_CASE("iwae with one sample equals the single-sample elbo") {
  auto m = tiny_model(3, 2, {}, Likelihood::kGaussian, 11);
  const Matrix x = fixtures::normal(5, 3, 12);
  const Matrix eps = fixtures::normal(5, 2, 13);
  ad::Tape t1, t2;
  const Matrix a = iwae_bound(t1, m, x, {eps}).data();
  const Matrix b = elbo_single_sample(t2, m, x, eps).data();
  for (std::size_t r = 0; r < 5; ++r) CHECK(a[r] == doctest::Approx(b[r]).epsilon(1e-14));
  ad::Tape t3;
  CHECK_THROWS(iwae_bound(t3, m, x, {}));
}

TEST_CASE("iwae bound grows with the number of samples on average") {
  auto m = tiny_model(3, 2, {}, Likelihood::kGaussian, 14);
  fixtures::jitter(m.params, 15, 0.5);
  const Matrix x = fixtures::normal(20, 3, 16);
  std::vector<double> means;
  for (std::size_t s : {1, 5, 50}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::vector<Matrix> eps;
      for (std::size_t i = 0; i < s; ++i) eps.push_back(fixtures::normal(20, 2, mix_seed(seed, s, i)));
      ad::Tape t;
      total += ad::mean(iwae_bound(t, m, x, eps)).item();
    }
    means.push_back(total / 5.0);
  }
  CHECK(means[0] < means[1]);
  CHECK(means[1] < means[2]);
}

TEST_CASE("iwae approaches log p(x) on the conjugate model") {
  // exact posterior: every importance weight equals p(x)
  auto c = fixtures::conjugate_model();
  const Matrix x = Matrix::from_rows({{0.3}, {-1.2}, {2.0}});
  for (std::size_t s : {1, 10}) {
    std::vector<Matrix> eps;
    for (std::size_t i = 0; i < s; ++i) eps.push_back(fixtures::normal(3, 1, 100 + i));
    ad::Tape t;
    const Matrix b = iwae_bound(t, c.model, x, eps).data();
    for (std::size_t r = 0; r < 3; ++r) CHECK(b[r] == doctest::Approx(c.log_marginal(x[r])).epsilon(1e-12));
  }
  // a mismatched encoder gets closer as S grows
  c.model.params.get("encoder.0.b").value(0, 1) += 1.0;
  double prev_gap = 1e9;
  for (std::size_t s : {1, 10, 1000}) {
    std::vector<Matrix> eps;
    for (std::size_t i = 0; i < s; ++i) eps.push_back(fixtures::normal(3, 1, 500 + i));
    ad::Tape t;
    const Matrix b = iwae_bound(t, c.model, x, eps).data();
    double gap = 0.0;
    for (std::size_t r = 0; r < 3; ++r) gap += std::abs(c.log_marginal(x[r]) - b[r]);
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }
  CHECK(prev_gap < 0.05);
}

TEST_CASE("csrae_loss") {
  auto m = tiny_model(3, 2, {}, Likelihood::kGaussian, 17);
  const Matrix x = fixtures::normal(5, 3, 18);
  const Matrix eps = fixtures::normal(5, 2, 19);
  ad::Tape t;
  const LossTerms l0 = csrae_loss(t, m, x, 0.0, eps);
  CHECK(l0.loss.item() == l0.reconstruction_error.item());
  zero_all(m.params);
  ad::Tape t2;
  CHECK(std::abs(csrae_loss(t2, m, x, 1.0, eps).divergence.item()) < 1e-12);
  ad::Tape t3;
  CHECK_THROWS(csrae_loss(t3, m, x, std::nan(""), eps));
}

TEST_CASE("mixture_csrae_loss with K = 1 equals csrae_loss") {
  auto m = tiny_model(3, 2, fixtures::mixture_prior(1), Likelihood::kGaussian, 20);
  fixtures::jitter(m.params, 21);
  const Matrix x = fixtures::normal(7, 3, 22);
  const Matrix eps = fixtures::normal(7, 2, 23);
  ad::Tape t1, t2;
  const LossTerms a = mixture_csrae_loss(t1, m, x, 1.7, eps);
  const LossTerms b = csrae_loss(t2, m, x, 1.7, eps);
  CHECK(std::abs(a.loss.item() - b.loss.item()) < 1e-12);
  CHECK(std::abs(a.divergence.item() - b.divergence.item()) < 1e-12);
}

TEST_CASE("mixture CS term matches gmm_core for K = 10, D = 5") {
  auto m = tiny_model(4, 5, fixtures::mixture_prior(10), Likelihood::kGaussian, 24);
  fixtures::jitter(m.params, 25);
  const Matrix x = fixtures::normal(6, 4, 26);
  ad::Tape t;
  const EncoderOutput q = m.encoder.encode(t, m.params, t.constant(x));
  const ad::Value cs = cs_to_uniform_mixture(q, m.prior.components(t, m.params, m.encoder));
  const auto post = posterior_gaussians(m, x);
  const gmm::DiagGMM prior = m.prior.to_gmm(m.params, m.encoder);
  for (std::size_t r = 0; r < 6; ++r) {
    CHECK(std::abs(cs.data()[r] - gmm::cs_divergence(gmm::DiagGMM::single(post[r]), prior)) < 1e-10);
  }
}

TEST_CASE("repulsion term decreases as prior means spread") {
  ad::Tape t;
  double prev = 1e9;
  for (double gap : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const Matrix means = Matrix::from_rows({{-gap / 2}, {gap / 2}});
    const Matrix vars(2, 1, 1.0);
    const double rep =
        ad::logsumexp(ad::pairwise_log_overlap(t.constant(means), t.constant(vars), t.constant(means), t.constant(vars)))
            .item();
    // same quantity as log of K^2 <p,p> for the uniform mixture
    const gmm::DiagGMM p = gmm::DiagGMM::uniform({gmm::DiagGaussian({-gap / 2}, {1.0}), gmm::DiagGaussian({gap / 2}, {1.0})});
    const double quad = std::log(4.0) + gmm::log_inner_product(p, p);
    CHECK(rep == doctest::Approx(quad).epsilon(1e-12));
    CHECK(rep < prev);
    prev = rep;
  }
}

TEST_CASE("cs_to_uniform_mixture rejects non-uniform weights") {
  ad::Tape t;
  EncoderOutput q;
  q.mean = t.constant(Matrix(1, 1, 0.0));
  q.logvar = t.constant(Matrix(1, 1, 0.0));
  q.var = ad::exp(q.logvar);
  PriorComponents p;
  p.means = t.constant(Matrix::from_rows({{0.0}, {1.0}}));
  p.vars = t.constant(Matrix(2, 1, 1.0));
  p.log_weights = t.constant(Matrix::from_rows({{std::log(0.3), std::log(0.7)}}));
  CHECK_THROWS(cs_to_uniform_mixture(q, p));
  // the general form handles it and agrees with gmm_core
  const gmm::DiagGMM pg({0.3, 0.7}, {gmm::DiagGaussian({0.0}, {1.0}), gmm::DiagGaussian({1.0}, {1.0})});
  CHECK(cs_to_mixture(q, p).item() ==
        doctest::Approx(gmm::cs_divergence(gmm::DiagGMM::single(gmm::DiagGaussian::standard(1)), pg)).epsilon(1e-12));
}

TEST_CASE("cs_divergence_mixtures matches gmm_core") {
  ad::Tape t;
  const Matrix qm = Matrix::from_rows({{-1.0}, {2.0}});
  const Matrix qv = Matrix::from_rows({{0.5}, {1.5}});
  const Matrix pm = Matrix::from_rows({{0.0}, {1.0}, {-2.5}});
  const Matrix pv = Matrix::from_rows({{1.0}, {0.25}, {2.0}});
  const Matrix qw = Matrix::from_rows({{std::log(0.3), std::log(0.7)}});
  const Matrix pw = Matrix::from_rows({{std::log(0.2), std::log(0.5), std::log(0.3)}});
  const double v = cs_divergence_mixtures(t.constant(qm), t.constant(qv), qw, t.constant(pm), t.constant(pv), pw).item();
  CHECK(v == doctest::Approx(0.39239543443619684).epsilon(1e-10));
  CHECK_THROWS(cs_divergence_mixtures(t.constant(qm), t.constant(qv), pw, t.constant(pm), t.constant(pv), pw));
}

TEST_CASE("prior variants") {
  auto std_model = tiny_model(3, 2, {}, Likelihood::kGaussian, 1);
  CHECK(std_model.prior.kind() == PriorKind::kStandardNormal);
  CHECK(std_model.prior.size() == 1);

  auto mix = tiny_model(3, 2, fixtures::mixture_prior(4), Likelihood::kGaussian, 1);
  CHECK(mix.params.contains("prior.means"));
  CHECK(mix.params.get("prior.logvars").value == Matrix(4, 2, 0.0));
  const gmm::DiagGMM g = mix.prior.to_gmm(mix.params, mix.encoder);
  for (double w : g.weights()) CHECK(w == doctest::Approx(0.25));

  PriorSpec fixed = fixtures::mixture_prior(2);
  fixed.means = Matrix::from_rows({{0.0, 0.0}, {1.0, 1.0}});
  fixed.vars = Matrix(2, 2, 0.05);
  fixed.trainable = false;
  auto fm = tiny_model(3, 2, fixed, Likelihood::kGaussian, 1);
  CHECK_FALSE(fm.params.contains("prior.means"));
  CHECK(fm.prior.to_gmm(fm.params, fm.encoder).component(1).mean()[0] == 1.0);

  fixed.trainable = true;
  auto init = tiny_model(3, 2, fixed, Likelihood::kGaussian, 1);
  CHECK(init.params.get("prior.means").value == fixed.means);
  CHECK(init.params.get("prior.logvars").value(0, 0) == doctest::Approx(std::log(0.05)));

  PriorSpec vamp;
  vamp.kind = PriorKind::kVampData;
  vamp.components = 3;
  AutoencoderSpec spec;
  spec.data_dim = 3;
  spec.prior = vamp;
  CHECK_THROWS(build_autoencoder(spec));
  const Matrix train = fixtures::normal(10, 3, 2);
  auto vm = build_autoencoder(spec, &train);
  CHECK(vm.prior.pseudo_inputs().rows() == 3);
  CHECK(build_autoencoder(spec, &train).prior.pseudo_inputs() == vm.prior.pseudo_inputs());
  // components follow the encoder
  ad::Tape t;
  const PriorComponents pc = vm.prior.components(t, vm.params, vm.encoder);
  const auto post = posterior_gaussians(vm, vm.prior.pseudo_inputs());
  CHECK(pc.means.data()(2, 1) == post[2].mean()[1]);
  spec.prior.components = 11;
  CHECK_THROWS(build_autoencoder(spec, &train));
}

TEST_CASE("objective_loss dispatch") {
  auto m = tiny_model(3, 2, {}, Likelihood::kGaussian, 30);
  const Matrix x = fixtures::normal(4, 3, 31);
  const Matrix eps = fixtures::normal(4, 2, 32);
  LossConfig cfg;
  cfg.objective = Objective::kCsrae;
  ad::Tape t1, t2;
  CHECK(objective_loss(t1, m, cfg, x, 0.3, {eps}).loss.item() == csrae_loss(t2, m, x, 0.3, eps).loss.item());
  cfg.objective = Objective::kIwae;
  ad::Tape t3, t4;
  CHECK(objective_loss(t3, m, cfg, x, 1.0, {eps}).loss.item() ==
        doctest::Approx(-ad::mean(iwae_bound(t4, m, x, {eps})).item()).epsilon(1e-14));
  ad::Tape t5;
  CHECK_THROWS(objective_loss(t5, m, cfg, x, 1.0, {}));
}

TEST_CASE("warm-up and model selection score") {
  CHECK(warmup_coefficient(0, 100, 2.0) == 0.0);
  CHECK(warmup_coefficient(50, 100, 2.0) == doctest::Approx(1.0));
  CHECK(warmup_coefficient(100, 100, 2.0) == 2.0);
  CHECK(warmup_coefficient(250, 100, 2.0) == 2.0);
  CHECK(warmup_coefficient(3, 0, 2.0) == 2.0);
  CHECK_THROWS(warmup_coefficient(3, -1, 2.0));
  CHECK(model_selection_score(0.0, 0.0) == 0.0);
  CHECK(model_selection_score(1.0, 0.5) < model_selection_score(1.0, 0.6));
}

TEST_CASE("decomposition identity on the conjugate model") {
  auto c = fixtures::conjugate_model();
  const double x[] = {0.8};
  gmm::QuadratureSpec grid;
  grid.lower = -12;
  grid.upper = 12;
  grid.panels = 20000;
  const auto r = decomposition_check_1d(c.model, x, 1.0, grid);
  CHECK(r.log_marginal == doctest::Approx(c.log_marginal(0.8)).epsilon(1e-9));
  CHECK(std::abs(r.kl_posterior) < 1e-8);
  CHECK(r.residual < 1e-6);
  CHECK(r.cs_quadrature == doctest::Approx(r.cs_closed_form).epsilon(1e-8));

  // lambda chosen so that lambda * CS = KL(q || p): the objective equals the ELBO
  const double lam = r.kl_prior / r.cs_closed_form;
  const auto r2 = decomposition_check_1d(c.model, x, lam, grid);
  CHECK(std::abs(r2.objective - r2.elbo) < 1e-3);

  grid.lower = -1;
  grid.upper = 1;
  CHECK_THROWS_WITH(decomposition_check_1d(c.model, x, 1.0, grid), doctest::Contains("coverage"));
}

TEST_CASE("objective equals log p(x) when q, posterior and prior coincide") {
  // decoder ignores z: p(z|x) = p(z) = q(z|x) = N(0, 1)
  auto c = fixtures::conjugate_model(0.0, 0.3, 1.0);
  const double x[] = {0.5};
  gmm::QuadratureSpec grid;
  grid.lower = -10;
  grid.upper = 10;
  const auto r = decomposition_check_1d(c.model, x, 2.0, grid);
  CHECK(r.objective == doctest::Approx(r.log_marginal).epsilon(1e-9));
}
