#include "csrae/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "csrae/rng.hpp"

namespace csrae::gmm {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_dims(std::size_t a, std::size_t b, const char* where) {
  if (a != b) {
    throw std::invalid_argument(std::string(where) + ": dimension mismatch (" +
                                std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

double simpson(const std::vector<double>& f, double h) {
  const std::size_t n = f.size() - 1;  // number of panels, even
  double s = f.front() + f.back();
  for (std::size_t i = 1; i < n; ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * f[i];
  return s * h / 3.0;
}

}  // namespace

DiagGaussian::DiagGaussian(std::vector<double> mean, std::vector<double> var)
    : mean_(std::move(mean)), var_(std::move(var)) {
  check_dims(mean_.size(), var_.size(), "DiagGaussian");
  for (std::size_t d = 0; d < var_.size(); ++d) {
    if (!(var_[d] > 0.0) || !std::isfinite(var_[d])) {
      throw std::invalid_argument("DiagGaussian: variance at dim " + std::to_string(d) +
                                  " must be positive and finite");
    }
    if (!std::isfinite(mean_[d])) {
      throw std::invalid_argument("DiagGaussian: non-finite mean at dim " + std::to_string(d));
    }
  }
}

DiagGaussian DiagGaussian::from_learned(std::vector<double> mean, std::vector<double> var) {
  for (auto& v : var) v = std::max(v, kVarianceFloor);
  return DiagGaussian(std::move(mean), std::move(var));
}

DiagGaussian DiagGaussian::standard(std::size_t dim) {
  return DiagGaussian(std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0));
}

DiagGMM::DiagGMM(std::vector<double> weights, std::vector<DiagGaussian> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("DiagGMM: at least one component required");
  check_dims(weights_.size(), components_.size(), "DiagGMM weights");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw std::invalid_argument("DiagGMM: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("DiagGMM: weights sum to " + std::to_string(total));
  }
  for (const auto& c : components_) check_dims(c.dim(), components_.front().dim(), "DiagGMM");
}

DiagGMM DiagGMM::single(DiagGaussian g) { return DiagGMM({1.0}, {std::move(g)}); }

DiagGMM DiagGMM::uniform(std::vector<DiagGaussian> components) {
  const std::size_t k = components.size();
  if (k == 0) throw std::invalid_argument("DiagGMM: at least one component required");
  return DiagGMM(std::vector<double>(k, 1.0 / static_cast<double>(k)), std::move(components));
}

void QuadratureSpec::validate() const {
  if (!(lower < upper)) throw std::invalid_argument("QuadratureSpec: lower must be < upper");
  if (panels < 2 || panels % 2 != 0) {
    throw std::invalid_argument("QuadratureSpec: panels must be even and >= 2");
  }
}

double log_pdf(const DiagGaussian& g, std::span<const double> x) {
  check_dims(x.size(), g.dim(), "log_pdf");
  double acc = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double diff = x[d] - g.mean()[d];
    acc += -0.5 * (kLog2Pi + std::log(g.var()[d])) - diff * diff / (2.0 * g.var()[d]);
  }
  return acc;
}

double log_pdf(const DiagGMM& p, std::span<const double> x) {
  std::vector<double> terms(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    terms[k] = std::log(p.weights()[k]) + log_pdf(p.component(k), x);
  }
  return log_sum_exp(terms);
}

double gaussian_overlap(const DiagGaussian& a, const DiagGaussian& b) {
  check_dims(a.dim(), b.dim(), "gaussian_overlap");
  double acc = 0.0;
  for (std::size_t d = 0; d < a.dim(); ++d) {
    const double s = a.var()[d] + b.var()[d];
    const double diff = a.mean()[d] - b.mean()[d];
    acc += -0.5 * (kLog2Pi + std::log(s)) - diff * diff / (2.0 * s);
  }
  return acc;
}

GaussianProduct product_of_gaussians(const DiagGaussian& a, const DiagGaussian& b) {
  const double log_scale = gaussian_overlap(a, b);
  std::vector<double> mean(a.dim());
  std::vector<double> var(a.dim());
  for (std::size_t d = 0; d < a.dim(); ++d) {
    const double pa = 1.0 / a.var()[d];
    const double pb = 1.0 / b.var()[d];
    mean[d] = (a.mean()[d] * pa + b.mean()[d] * pb) / (pa + pb);
    var[d] = a.var()[d] * b.var()[d] / (a.var()[d] + b.var()[d]);
  }
  return {log_scale, DiagGaussian(std::move(mean), std::move(var))};
}

double log_inner_product(const DiagGMM& q, const DiagGMM& p) {
  check_dims(q.dim(), p.dim(), "log_inner_product");
  std::vector<double> terms;
  terms.reserve(q.size() * p.size());
  for (std::size_t n = 0; n < q.size(); ++n) {
    for (std::size_t m = 0; m < p.size(); ++m) {
      terms.push_back(std::log(q.weights()[n]) + std::log(p.weights()[m]) +
                      gaussian_overlap(q.component(n), p.component(m)));
    }
  }
  return log_sum_exp(terms);
}

double cs_divergence(const DiagGMM& q, const DiagGMM& p) {
  check_dims(q.dim(), p.dim(), "cs_divergence");
  return -log_inner_product(q, p) + 0.5 * log_inner_product(q, q) +
         0.5 * log_inner_product(p, p);
}

double kl_diag_gaussians(const DiagGaussian& q, const DiagGaussian& p) {
  check_dims(q.dim(), p.dim(), "kl_diag_gaussians");
  double acc = 0.0;
  for (std::size_t d = 0; d < q.dim(); ++d) {
    const double diff = q.mean()[d] - p.mean()[d];
    acc += 0.5 * (std::log(p.var()[d] / q.var()[d]) + (q.var()[d] + diff * diff) / p.var()[d] -
                  1.0);
  }
  return acc;
}

double mc_kl(const DiagGMM& q, const DiagGMM& p, std::size_t samples, std::uint64_t seed) {
  check_dims(q.dim(), p.dim(), "mc_kl");
  if (samples == 0) throw std::invalid_argument("mc_kl: samples must be >= 1");
  const GmmSamples draws = sample_gmm(q, samples, seed);
  double acc = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto x = draws.points.row_span(s);
    acc += log_pdf(q, x) - log_pdf(p, x);
  }
  return acc / static_cast<double>(samples);
}

double cs_divergence_quadrature_1d(const DiagGMM& q, const DiagGMM& p,
                                   const QuadratureSpec& spec) {
  spec.validate();
  if (q.dim() != 1 || p.dim() != 1) {
    throw std::invalid_argument("cs_divergence_quadrature_1d: mixtures must be one-dimensional");
  }
  for (const DiagGMM* mix : {&q, &p}) {
    for (const auto& c : mix->components()) {
      const double sd = std::sqrt(c.var()[0]);
      if (c.mean()[0] - 8.0 * sd < spec.lower || c.mean()[0] + 8.0 * sd > spec.upper) {
        throw std::invalid_argument(
            "cs_divergence_quadrature_1d: integration range does not cover 8 standard "
            "deviations around every component mean");
      }
    }
  }
  const std::size_t n = spec.panels;
  const double h = (spec.upper - spec.lower) / static_cast<double>(n);
  std::vector<double> fqp(n + 1), fqq(n + 1), fpp(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    const double x = spec.lower + h * static_cast<double>(i);
    const double qx = std::exp(log_pdf(q, std::span<const double>(&x, 1)));
    const double px = std::exp(log_pdf(p, std::span<const double>(&x, 1)));
    fqp[i] = qx * px;
    fqq[i] = qx * qx;
    fpp[i] = px * px;
  }
  return -std::log(simpson(fqp, h)) + 0.5 * std::log(simpson(fqq, h)) +
         0.5 * std::log(simpson(fpp, h));
}

QuadratureSpec default_quadrature(const DiagGMM& q, const DiagGMM& p, std::size_t panels) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  double max_sd = 0.0;
  for (const DiagGMM* mix : {&q, &p}) {
    for (const auto& c : mix->components()) {
      lo = std::min(lo, c.mean()[0]);
      hi = std::max(hi, c.mean()[0]);
      max_sd = std::max(max_sd, std::sqrt(c.var()[0]));
    }
  }
  return {lo - 10.0 * max_sd, hi + 10.0 * max_sd, panels};
}

GmmSamples sample_gmm(const DiagGMM& p, std::size_t n, std::uint64_t seed,
                      std::optional<std::size_t> component) {
  if (component && *component >= p.size()) {
    throw std::out_of_range("sample_gmm: component index " + std::to_string(*component) +
                            " out of range for K=" + std::to_string(p.size()));
  }
  Rng rng(seed);
  GmmSamples out{Matrix(n, p.dim()), std::vector<std::size_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = component ? *component : rng.categorical(p.weights());
    const auto& g = p.component(k);
    out.components[i] = k;
    for (std::size_t d = 0; d < p.dim(); ++d) {
      out.points(i, d) = g.mean()[d] + std::sqrt(g.var()[d]) * rng.normal();
    }
  }
  return out;
}

}  // namespace csrae::gmm
