#include "csrae/semisup.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csrae::semisup {

namespace {

void require_weight(double v, const char* name) {
  if (!std::isfinite(v) || v < 0.0) {
    throw std::invalid_argument(std::string("ssl config: ") + name + " must be finite and >= 0");
  }
}

std::vector<double> prior_or_uniform(const SslConfig& cfg, std::size_t classes) {
  if (!cfg.class_prior.empty()) return cfg.class_prior;
  return std::vector<double>(classes, 1.0 / static_cast<double>(classes));
}

struct Shared {
  ad::Value x;
  models::EncoderOutput q;
  ad::Value z;
  ad::Value cs;      // B x 1
  ad::Value logits;  // B x (outputs * classes)
};

Shared prepare(ad::Tape& tape, SemiSupModel& model, const Matrix& x, const Matrix& eps) {
  Shared s;
  s.x = tape.constant(x);
  s.q = model.encoder.encode(tape, model.params, s.x);
  if (!eps.same_shape(s.q.mean.data())) {
    throw std::invalid_argument("noise shape " + eps.shape_string() + " does not match posterior " +
                                s.q.mean.data().shape_string());
  }
  s.z = models::reparameterize(s.q, tape.constant(eps));
  s.cs = models::cs_to_mixture(s.q, model.prior.components(tape, model.params, model.encoder));
  s.logits = model.classifier.logits(tape, model.params, s.x);
  return s;
}

// log p(x | z, y) per row for a label code (B x outputs*classes).
ad::Value conditional_ll(ad::Tape& tape, SemiSupModel& model, const Shared& s, ad::Value code) {
  const ad::Value h =
      model.embedding_dim == 0 ? code : model.embedding.forward(tape, model.params, code);
  return model.decoder.log_likelihood(tape, model.params, ad::concat_cols({s.z, h}), s.x);
}

// -log p(x|z,y) + lambda CS + beta KL per row.
ad::Value ssl_rows(ad::Value ll, const Shared& s, ad::Value kl, const SslConfig& cfg) {
  return ad::add(ad::sub(ad::scale(s.cs, cfg.lambda), ll), ad::scale(kl, cfg.beta));
}

Matrix class_code(std::size_t rows, std::size_t classes, std::size_t c) {
  Matrix m(rows, classes);
  for (std::size_t r = 0; r < rows; ++r) m(r, c) = 1.0;
  return m;
}

ad::Value log_softmax_blocks(ad::Value logits, std::size_t outputs, std::size_t classes) {
  if (outputs == 1) return ad::log_softmax_rows(logits);
  std::vector<ad::Value> parts;
  for (std::size_t l = 0; l < outputs; ++l)
    parts.push_back(ad::log_softmax_rows(ad::slice_cols(logits, l * classes, classes)));
  return ad::concat_cols(parts);
}

}  // namespace

UnlabelledMode unlabelled_mode_from_string(const std::string& s) {
  if (s == "q_weighted") return UnlabelledMode::kQWeighted;
  if (s == "literal_sum") return UnlabelledMode::kLiteralSum;
  throw std::invalid_argument("unknown unlabelled mode '" + s + "'");
}

void SslConfig::validate(std::size_t classes) const {
  require_weight(lambda, "lambda");
  require_weight(beta, "beta");
  require_weight(alpha, "alpha");
  if (!std::isfinite(tau) || tau <= 0.0) throw std::invalid_argument("ssl config: tau must be > 0");
  if (!class_prior.empty()) {
    if (class_prior.size() != classes) {
      throw std::invalid_argument("ssl config: class prior has " +
                                  std::to_string(class_prior.size()) + " entries, expected " +
                                  std::to_string(classes));
    }
    double total = 0.0;
    for (double p : class_prior) {
      if (!(p > 0.0)) throw std::invalid_argument("ssl config: class prior entries must be > 0");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("ssl config: class prior must sum to 1");
  }
}

ClassifierHead::ClassifierHead(ad::ParamStore& store, const std::string& prefix,
                               std::size_t input_dim, std::vector<nn::LayerSpec> hidden,
                               std::size_t classes, std::size_t outputs, std::uint64_t seed)
    : classes_(classes), outputs_(outputs) {
  if (classes == 0 || outputs == 0) {
    throw std::invalid_argument("ClassifierHead: classes and outputs must be >= 1");
  }
  hidden.push_back({classes * outputs, nn::Activation::kIdentity});
  net_ = nn::Mlp(store, prefix, input_dim, std::move(hidden), seed);
}

ad::Value ClassifierHead::logits(ad::Tape& tape, ad::ParamStore& store, ad::Value x) const {
  return net_.forward(tape, store, x);
}

std::vector<int> ClassifierHead::predict(ad::ParamStore& store, const Matrix& x) const {
  ad::Tape tape;
  const Matrix& h = logits(tape, store, tape.constant(x)).data();
  std::vector<int> out;
  out.reserve(x.rows() * outputs_);
  for (std::size_t r = 0; r < h.rows(); ++r) {
    for (std::size_t l = 0; l < outputs_; ++l) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes_; ++c)
        if (h(r, l * classes_ + c) > h(r, l * classes_ + best)) best = c;
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

SemiSupModel build_semisup(const SemiSupSpec& spec, const Matrix* training_features) {
  SemiSupModel m;
  m.encoder = models::MlpEncoder(m.params, "encoder", spec.data_dim, spec.encoder_hidden,
                                 spec.latent_dim, mix_seed(spec.seed, 1));
  const std::size_t code = spec.classes * spec.outputs;
  m.embedding_dim = spec.embedding_dim;
  const std::size_t label_width = spec.embedding_dim == 0 ? code : spec.embedding_dim;
  m.decoder = models::MlpDecoder(m.params, "decoder", spec.latent_dim + label_width,
                                 spec.decoder_hidden, spec.data_dim, spec.likelihood,
                                 mix_seed(spec.seed, 2));
  m.classifier = ClassifierHead(m.params, "classifier", spec.data_dim, spec.classifier_hidden,
                                spec.classes, spec.outputs, mix_seed(spec.seed, 5));
  if (spec.embedding_dim > 0) {
    m.embedding = nn::Mlp(m.params, "embedding", code,
                          {{spec.embedding_dim, nn::Activation::kIdentity}}, mix_seed(spec.seed, 6));
  }
  m.prior = models::build_prior(m.params, spec.prior, spec.latent_dim, spec.data_dim, spec.seed,
                                training_features);
  return m;
}

Matrix one_hot(std::span<const int> labels, std::size_t outputs, std::size_t classes) {
  if (outputs == 0 || labels.size() % outputs != 0) {
    throw std::invalid_argument("one_hot: label count is not a multiple of the output count");
  }
  const std::size_t n = labels.size() / outputs;
  Matrix m(n, outputs * classes);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t l = 0; l < outputs; ++l) {
      const int y = labels[r * outputs + l];
      if (y < 0 || static_cast<std::size_t>(y) >= classes) {
        throw std::invalid_argument("one_hot: label " + std::to_string(y) + " at row " +
                                    std::to_string(r) + " outside [0, " +
                                    std::to_string(classes) + ")");
      }
      m(r, l * classes + static_cast<std::size_t>(y)) = 1.0;
    }
  }
  return m;
}

void validate_one_hot(const Matrix& y, std::size_t outputs, std::size_t classes) {
  if (y.cols() != outputs * classes) {
    throw std::invalid_argument("labels: expected " + std::to_string(outputs * classes) +
                                " columns, got " + std::to_string(y.cols()));
  }
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t l = 0; l < outputs; ++l) {
      int ones = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        const double v = y(r, l * classes + c);
        if (v == 1.0) {
          ++ones;
        } else if (v != 0.0) {
          ones = -1;
          break;
        }
      }
      if (ones != 1) {
        throw std::invalid_argument("labels: row " + std::to_string(r) + " is not one-hot");
      }
    }
  }
}

double categorical_kl(std::span<const double> p, std::span<const double> prior) {
  if (p.size() != prior.size()) throw std::invalid_argument("categorical_kl: size mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k] > 0.0) kl += p[k] * std::log(p[k] / prior[k]);
  return kl;
}

ad::Value categorical_kl_rows(ad::Value logits, std::span<const double> prior,
                              std::size_t outputs) {
  const std::size_t classes = prior.size();
  if (logits.cols() != classes * outputs) {
    throw std::invalid_argument("categorical_kl_rows: logits width does not match prior");
  }
  ad::Tape& tape = logits.tape();
  Matrix log_prior(1, classes * outputs);
  for (std::size_t l = 0; l < outputs; ++l)
    for (std::size_t c = 0; c < classes; ++c) log_prior(0, l * classes + c) = std::log(prior[c]);
  const ad::Value logq = log_softmax_blocks(logits, outputs, classes);
  return ad::sum_rows(ad::mul(ad::exp(logq), ad::sub(logq, tape.constant(log_prior))));
}

ad::Value gumbel_softmax(ad::Value logits, ad::Value gumbel, double tau, std::size_t outputs) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: tau must be > 0");
  const ad::Value t = ad::scale(ad::add(logits, gumbel), 1.0 / tau);
  if (outputs == 1) return ad::softmax_rows(t);
  const std::size_t classes = logits.cols() / outputs;
  std::vector<ad::Value> parts;
  for (std::size_t l = 0; l < outputs; ++l)
    parts.push_back(ad::softmax_rows(ad::slice_cols(t, l * classes, classes)));
  return ad::concat_cols(parts);
}

std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax_sample: tau must be > 0");
  if (logits.empty()) throw std::invalid_argument("gumbel_softmax_sample: empty logits");
  std::vector<double> t(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) t[k] = (logits[k] + rng.gumbel()) / tau;
  const double mx = *std::max_element(t.begin(), t.end());
  double total = 0.0;
  for (double& v : t) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : t) v /= total;
  return t;
}

std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau,
                                          std::uint64_t seed) {
  Rng rng(seed);
  return gumbel_softmax_sample(logits, tau, rng);
}

ad::Value labelled_loss(ad::Tape& tape, SemiSupModel& model, const Matrix& x, const Matrix& y,
                        const SslConfig& cfg, const Matrix& eps) {
  cfg.validate(model.classes());
  validate_one_hot(y, model.outputs(), model.classes());
  if (y.rows() != x.rows()) throw std::invalid_argument("labelled_loss: x and y row counts differ");
  const Shared s = prepare(tape, model, x, eps);
  const std::vector<double> prior = prior_or_uniform(cfg, model.classes());
  const ad::Value kl = categorical_kl_rows(ad::detach(s.logits), prior, model.outputs());
  const ad::Value ll = conditional_ll(tape, model, s, tape.constant(y));
  return ad::mean(ssl_rows(ll, s, kl, cfg));
}

ad::Value unlabelled_loss(ad::Tape& tape, SemiSupModel& model, const Matrix& x,
                          const SslConfig& cfg, const Matrix& eps) {
  cfg.validate(model.classes());
  if (model.outputs() != 1) {
    throw std::invalid_argument("unlabelled_loss: enumeration needs a single output; use the Gumbel path");
  }
  const std::size_t k = model.classes();
  if (k > kMaxEnumeratedClasses) {
    throw std::invalid_argument("unlabelled_loss: " + std::to_string(k) +
                                " classes exceed the enumeration limit of " +
                                std::to_string(kMaxEnumeratedClasses) +
                                "; use the Gumbel-Softmax path");
  }
  const Shared s = prepare(tape, model, x, eps);
  const std::vector<double> prior = prior_or_uniform(cfg, k);
  const bool literal = cfg.mode == UnlabelledMode::kLiteralSum;
  // The literal sum reuses the labelled loss exactly, detached KL included.
  const ad::Value kl = categorical_kl_rows(literal ? ad::detach(s.logits) : s.logits, prior, 1);
  std::vector<ad::Value> per_class;
  per_class.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    const ad::Value ll = conditional_ll(tape, model, s, tape.constant(class_code(x.rows(), k, c)));
    per_class.push_back(ssl_rows(ll, s, kl, cfg));
  }
  const ad::Value losses = k == 1 ? per_class.front() : ad::concat_cols(per_class);
  if (literal) return ad::mean(ad::sum_rows(losses));
  const ad::Value logq = ad::log_softmax_rows(s.logits);
  return ad::mean(ad::sum_rows(ad::mul(ad::exp(logq), ad::add(losses, logq))));
}

ad::Value multilabel_unlabelled_loss(ad::Tape& tape, SemiSupModel& model, const Matrix& x,
                                     const SslConfig& cfg, const Matrix& eps,
                                     const Matrix& gumbel) {
  cfg.validate(model.classes());
  if (gumbel.rows() != x.rows() || gumbel.cols() != model.code_width()) {
    throw std::invalid_argument("multilabel_unlabelled_loss: Gumbel noise shape " +
                                gumbel.shape_string() + " does not match the label code");
  }
  const Shared s = prepare(tape, model, x, eps);
  const std::vector<double> prior = prior_or_uniform(cfg, model.classes());
  const ad::Value kl = categorical_kl_rows(s.logits, prior, model.outputs());
  const ad::Value y = gumbel_softmax(s.logits, tape.constant(gumbel), cfg.tau, model.outputs());
  const ad::Value ll = conditional_ll(tape, model, s, y);
  // -H(q(y|x)) summed over outputs.
  const ad::Value logq = log_softmax_blocks(s.logits, model.outputs(), model.classes());
  const ad::Value neg_entropy = ad::sum_rows(ad::mul(ad::exp(logq), logq));
  return ad::mean(ad::add(ssl_rows(ll, s, kl, cfg), neg_entropy));
}

ad::Value classification_loss(ad::Tape& tape, SemiSupModel& model, const Matrix& x,
                              const Matrix& y) {
  validate_one_hot(y, model.outputs(), model.classes());
  const ad::Value h = model.classifier.logits(tape, model.params, tape.constant(x));
  const ad::Value logq = log_softmax_blocks(h, model.outputs(), model.classes());
  return ad::neg(ad::mean(ad::sum_rows(ad::mul(logq, tape.constant(y)))));
}

ad::Value combined_objective(ad::Tape& tape, SemiSupModel& model, const LabelledBatch& labelled,
                             const UnlabelledBatch& unlabelled, const SslConfig& cfg) {
  const bool has_l = labelled.x.rows() > 0;
  const bool has_u = unlabelled.x.rows() > 0;
  if (!has_l && !has_u) throw std::invalid_argument("combined_objective: both batches are empty");
  ad::Value total;
  auto accumulate = [&](ad::Value v) { total = total.valid() ? ad::add(total, v) : v; };
  if (has_l) {
    accumulate(labelled_loss(tape, model, labelled.x, labelled.y, cfg, labelled.eps));
    if (cfg.alpha > 0.0) {
      accumulate(ad::scale(classification_loss(tape, model, labelled.x, labelled.y), cfg.alpha));
    }
  }
  if (has_u) {
    if (model.outputs() == 1) {
      accumulate(unlabelled_loss(tape, model, unlabelled.x, cfg, unlabelled.eps));
    } else {
      accumulate(multilabel_unlabelled_loss(tape, model, unlabelled.x, cfg, unlabelled.eps,
                                            unlabelled.gumbel));
    }
  }
  return total;
}

BalancedBatchIterator::BalancedBatchIterator(std::vector<int> labels, std::size_t outputs,
                                             std::size_t batch_size, std::uint64_t seed)
    : outputs_(outputs), batch_size_(batch_size), rng_(seed) {
  if (outputs == 0 || labels.size() % outputs != 0) {
    throw std::invalid_argument("balanced batches: label count is not a multiple of outputs");
  }
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw std::invalid_argument("balanced batches: batch size must be even and >= 2");
  }
  const std::size_t n = labels.size() / outputs;
  positives_.resize(outputs);
  negatives_.resize(outputs);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t l = 0; l < outputs; ++l) {
      const int y = labels[r * outputs + l];
      if (y == 1) {
        positives_[l].rows.push_back(r);
      } else if (y == 0) {
        negatives_[l].rows.push_back(r);
      } else {
        throw std::invalid_argument("balanced batches: label at row " + std::to_string(r) +
                                    " is not binary");
      }
    }
  }
  for (std::size_t l = 0; l < outputs; ++l) {
    if (positives_[l].rows.empty() || negatives_[l].rows.empty()) {
      throw std::invalid_argument("balanced batches: output " + std::to_string(l) +
                                  " has an empty class");
    }
  }
}

std::size_t BalancedBatchIterator::draw(Pool& pool) {
  if (pool.cursor == 0) {
    for (std::size_t i = pool.rows.size(); i > 1; --i) std::swap(pool.rows[i - 1], pool.rows[rng_.below(i)]);
  }
  const std::size_t r = pool.rows[pool.cursor];
  pool.cursor = (pool.cursor + 1) % pool.rows.size();
  return r;
}

std::vector<std::size_t> BalancedBatchIterator::next() {
  const std::size_t l = active_output();
  std::vector<std::size_t> batch;
  batch.reserve(batch_size_);
  for (std::size_t i = 0; i < batch_size_ / 2; ++i) batch.push_back(draw(positives_[l]));
  for (std::size_t i = 0; i < batch_size_ / 2; ++i) batch.push_back(draw(negatives_[l]));
  ++step_;
  return batch;
}

}  // namespace csrae::semisup
