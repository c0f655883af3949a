#include "csrae/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "csrae/checkpoint.hpp"
#include "csrae/eval.hpp"
#include "csrae/gmm.hpp"
#include "csrae/models.hpp"
#include "csrae/rng.hpp"
#include "csrae/semisup.hpp"

namespace csrae::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stream tags for derived seeds.
enum : std::uint64_t {
  kSeedPinwheel = 11,
  kSeedTwoGaussian = 12,
  kSeedSplit = 13,
  kSeedEvalBinarize = 14,
  kSeedShuffle = 21,
  kSeedBinarize = 31,
  kSeedNoise = 41,
  kSeedValNoise = 42,
  kSeedTestNoise = 43,
  kSeedLabelled = 51,
  kSeedBalanced = 52,
  kSeedKlNoise = 61,
  kSeedKlEval = 62,
  kSeedImportance = 71,
  kSeedSample = 81,
  kSeedEmbed = 91,
};

constexpr std::size_t kEvalBlock = 500;

std::array<std::size_t, 3> default_split(std::size_t n, bool mnist_sized) {
  if (mnist_sized && n >= 60000) return data::kMnistSplit;
  const std::size_t train = n * 3 / 4;
  const std::size_t val = n / 8;
  return {train, val, n - train - val};
}

std::vector<std::size_t> iota_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<int> first_output_labels(const data::Dataset& ds) {
  std::vector<int> out(ds.size());
  for (std::size_t r = 0; r < ds.size(); ++r) out[r] = ds.label(r, 0);
  return out;
}

void check_finite(double v, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(v)) {
    throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch));
  }
}

// Loads parameters whose names and shapes match; two-phase training reuses an
// unsupervised checkpoint whose decoder input width differs.
void load_init(const std::string& path, ad::ParamStore& store) {
  std::size_t matched = 0;
  for (const NamedArray& a : read_checkpoint(path)) {
    if (store.contains(a.name) && store.get(a.name).value.same_shape(a.value)) {
      store.get(a.name).value = a.value;
      ++matched;
    }
  }
  if (matched == 0) {
    throw std::invalid_argument("init checkpoint '" + path + "' shares no parameters with the model");
  }
}

models::AutoencoderSpec unsup_spec(const config::ExperimentConfig& cfg, const data::Splits& s) {
  models::AutoencoderSpec spec = cfg.model;
  spec.data_dim = s.train.dim();
  spec.seed = cfg.seed;
  return spec;
}

semisup::SemiSupSpec ssl_spec(const config::ExperimentConfig& cfg, const data::Splits& s) {
  semisup::SemiSupSpec spec;
  spec.data_dim = s.train.dim();
  spec.latent_dim = cfg.model.latent_dim;
  spec.classes = cfg.semisup.classes;
  spec.outputs = cfg.semisup.outputs;
  spec.embedding_dim = cfg.semisup.embedding_dim;
  spec.encoder_hidden = cfg.model.encoder_hidden;
  spec.decoder_hidden = cfg.model.decoder_hidden;
  spec.classifier_hidden = cfg.semisup.classifier_hidden;
  spec.likelihood = cfg.model.likelihood;
  spec.prior = cfg.model.prior;
  spec.seed = cfg.seed;
  return spec;
}

Matrix labels_one_hot(const data::Dataset& ds, const config::ExperimentConfig& cfg) {
  if (ds.label_cols != cfg.semisup.outputs) {
    throw std::invalid_argument("dataset has " + std::to_string(ds.label_cols) +
                                " label columns, config expects " +
                                std::to_string(cfg.semisup.outputs));
  }
  return semisup::one_hot(ds.labels, cfg.semisup.outputs, cfg.semisup.classes);
}

struct Terms {
  double re = 0.0;
  double cs = 0.0;
  double score() const { return models::model_selection_score(re, cs); }
};

Terms evaluate_unsup(models::Autoencoder& m, const Matrix& x, std::uint64_t seed) {
  Terms t;
  if (x.rows() == 0) return t;
  Rng rng(seed);
  for (std::size_t begin = 0; begin < x.rows(); begin += kEvalBlock) {
    const std::size_t end = std::min(x.rows(), begin + kEvalBlock);
    const Matrix xb = x.select_rows(iota_indices(begin, end));
    const Matrix eps = rng.normal_matrix(xb.rows(), m.encoder.latent_dim());
    ad::Tape tape;
    const models::LossTerms lt = models::csrae_loss(tape, m, xb, 1.0, eps);
    t.re += lt.reconstruction_error.item() * static_cast<double>(xb.rows());
    t.cs += lt.divergence.item() * static_cast<double>(xb.rows());
  }
  t.re /= static_cast<double>(x.rows());
  t.cs /= static_cast<double>(x.rows());
  return t;
}

Terms evaluate_ssl(semisup::SemiSupModel& m, const Matrix& x, const Matrix& y, std::uint64_t seed) {
  Terms t;
  if (x.rows() == 0) return t;
  semisup::SslConfig recon;
  recon.lambda = 0.0;
  recon.beta = 0.0;
  Rng rng(seed);
  for (std::size_t begin = 0; begin < x.rows(); begin += kEvalBlock) {
    const std::size_t end = std::min(x.rows(), begin + kEvalBlock);
    const auto idx = iota_indices(begin, end);
    const Matrix xb = x.select_rows(idx);
    const Matrix eps = rng.normal_matrix(xb.rows(), m.encoder.latent_dim());
    ad::Tape tape;
    t.re += semisup::labelled_loss(tape, m, xb, y.select_rows(idx), recon, eps).item() *
            static_cast<double>(xb.rows());
    const models::EncoderOutput q = m.encoder.encode(tape, m.params, tape.constant(xb));
    const ad::Value cs =
        models::cs_to_mixture(q, m.prior.components(tape, m.params, m.encoder));
    t.cs += ad::sum(cs).item();
  }
  t.re /= static_cast<double>(x.rows());
  t.cs /= static_cast<double>(x.rows());
  return t;
}

double ssl_error(semisup::SemiSupModel& m, const data::Dataset& ds) {
  return eval::classification_error(m.classifier.predict(m.params, ds.features), ds.labels);
}

double warmup_coefficient_or_target(const config::ExperimentConfig& cfg, std::size_t epoch,
                                    double target) {
  return models::warmup_coefficient(static_cast<double>(epoch),
                                    static_cast<double>(cfg.optimizer.warmup_epochs), target);
}

struct StepStats {
  double loss = 0.0;
  double re = 0.0;
  double divergence = 0.0;
};

struct ValResult {
  Terms terms;
  json extra = json::object();
};

struct LoopHooks {
  std::size_t n_epoch_rows = 0;
  std::function<StepStats(std::size_t epoch, std::size_t batch,
                          const std::vector<std::size_t>& rows, double weight)>
      step;
  std::function<ValResult()> validate;
  double target_weight = 1.0;
  ad::ParamStore* params = nullptr;
  bool log_terms = true;  // train_re / train_divergence are meaningful
};

TrainSummary run_loop(const config::ExperimentConfig& cfg, LoopHooks& hooks) {
  fs::create_directories(cfg.output_dir);
  TrainSummary summary;
  summary.metrics_path = (fs::path(cfg.output_dir) / "metrics.jsonl").string();
  summary.checkpoint_path = (fs::path(cfg.output_dir) / "best.ckpt").string();
  std::ofstream log(summary.metrics_path);
  if (!log) throw std::runtime_error("cannot write '" + summary.metrics_path + "'");

  auto record = [&](std::size_t epoch, double weight, const StepStats* train, const ValResult& v,
                    bool improved) {
    json r;
    r["epoch"] = epoch;
    r["weight"] = weight;
    if (train) {
      r["train_loss"] = train->loss;
      if (hooks.log_terms) {
        r["train_re"] = train->re;
        r["train_divergence"] = train->divergence;
      }
    }
    r["val_re"] = v.terms.re;
    r["val_cs"] = v.terms.cs;
    r["model_selection_score"] = v.terms.score();
    r["improved"] = improved;
    for (const auto& [k, val] : v.extra.items()) r[k] = val;
    log << r.dump() << '\n';
  };

  ValResult v = hooks.validate();
  double best = v.terms.score();
  save_checkpoint(summary.checkpoint_path, *hooks.params);
  record(0, warmup_coefficient_or_target(cfg, 0, hooks.target_weight), nullptr, v, true);
  summary.best_val_score = best;

  std::size_t since = 0;
  const std::size_t bs = cfg.optimizer.batch_size;
  for (std::size_t epoch = 1; epoch <= cfg.optimizer.epochs; ++epoch) {
    const double weight = warmup_coefficient_or_target(cfg, epoch - 1, hooks.target_weight);
    std::vector<std::size_t> order = iota_indices(0, hooks.n_epoch_rows);
    Rng rng(mix_seed(cfg.seed, kSeedShuffle, epoch));
    shuffle(order, rng);
    StepStats acc;
    std::size_t batch = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs, ++batch) {
      const std::size_t end = std::min(order.size(), begin + bs);
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
      const StepStats s = hooks.step(epoch, batch, rows, weight);
      check_finite(s.loss, epoch, batch);
      const double w = static_cast<double>(rows.size());
      acc.loss += s.loss * w;
      acc.re += s.re * w;
      acc.divergence += s.divergence * w;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, order.size()));
    acc.loss /= n;
    acc.re /= n;
    acc.divergence /= n;
    v = hooks.validate();
    const bool improved = v.terms.score() < best;
    if (improved) {
      best = v.terms.score();
      summary.best_epoch = epoch;
      summary.best_val_score = best;
      save_checkpoint(summary.checkpoint_path, *hooks.params);
      since = 0;
    } else {
      ++since;
    }
    record(epoch, weight, &acc, v, improved);
    summary.epochs_run = epoch;
    if (cfg.optimizer.patience > 0 && since >= cfg.optimizer.patience) break;
  }
  return summary;
}

}  // namespace

data::Splits load_data(const config::ExperimentConfig& cfg) {
  cfg.validate();
  const auto& d = cfg.dataset;
  data::Dataset ds;
  bool mnist_sized = false;
  if (d.kind == "pinwheel") {
    ds = data::gen_pinwheel(d.pinwheel, mix_seed(cfg.seed, kSeedPinwheel));
  } else if (d.kind == "two_gaussian") {
    ds = data::gen_two_gaussian_1d(d.n, mix_seed(cfg.seed, kSeedTwoGaussian));
  } else if (d.kind == "idx") {
    ds = data::load_idx(d.images, d.labels);
    mnist_sized = true;
  } else {
    ds = data::load_csv_labeled(d.path, d.label_columns, d.header);
  }
  data::Splits s =
      data::split(ds, d.split.value_or(default_split(ds.size(), mnist_sized)), mix_seed(cfg.seed, kSeedSplit));
  for (data::Dataset* part : {&s.train, &s.val, &s.test}) part->binarization = d.binarization;
  if (d.binarization == data::Binarization::kStatic) {
    for (data::Dataset* part : {&s.train, &s.val, &s.test}) {
      part->features = data::binarize(part->features, d.binarization, 0, 0);
    }
  } else if (d.binarization == data::Binarization::kDynamic) {
    // Training batches are resampled every epoch; evaluation splits are drawn once.
    const std::uint64_t es = mix_seed(cfg.seed, kSeedEvalBinarize);
    s.val.features = data::binarize(s.val.features, d.binarization, 0, es, 1);
    s.test.features = data::binarize(s.test.features, d.binarization, 0, es, 2);
  }
  return s;
}

namespace {

struct UnsupRun {
  models::Autoencoder model;
  TrainSummary summary;
};

UnsupRun train_unsup(const config::ExperimentConfig& cfg, const data::Splits& s) {
  UnsupRun run{models::build_autoencoder(unsup_spec(cfg, s), &s.train.features), {}};
  models::Autoencoder& m = run.model;
  if (!cfg.init_checkpoint.empty()) load_init(cfg.init_checkpoint, m.params);
  nn::AdamState adam;
  adam.learning_rate = cfg.optimizer.learning_rate;
  const bool iwae = cfg.loss.objective == models::Objective::kIwae;
  const std::size_t n_eps = iwae ? cfg.loss.importance_samples : 1;
  const bool kl_weighted = cfg.loss.objective == models::Objective::kElbo ||
                           cfg.loss.objective == models::Objective::kBetaVae;

  LoopHooks hooks;
  hooks.n_epoch_rows = s.train.size();
  hooks.params = &m.params;
  hooks.target_weight = kl_weighted ? cfg.loss.beta : cfg.loss.lambda;
  hooks.step = [&](std::size_t epoch, std::size_t batch, const std::vector<std::size_t>& rows,
                   double weight) {
    Matrix x = s.train.features.select_rows(rows);
    if (cfg.dataset.binarization == data::Binarization::kDynamic) {
      x = data::binarize(x, data::Binarization::kDynamic, epoch, mix_seed(cfg.seed, kSeedBinarize), batch);
    }
    Rng rng(mix_seed(mix_seed(cfg.seed, kSeedNoise), epoch, batch));
    std::vector<Matrix> eps;
    for (std::size_t i = 0; i < n_eps; ++i) eps.push_back(rng.normal_matrix(x.rows(), m.encoder.latent_dim()));
    ad::Tape tape;
    const models::LossTerms t = models::objective_loss(tape, m, cfg.loss, x, weight, eps);
    StepStats st{t.loss.item(), t.reconstruction_error.item(), t.divergence.item()};
    check_finite(st.loss, epoch, batch);
    m.params.zero_grad();
    tape.backward(t.loss);
    nn::adam_step(m.params, adam);
    return st;
  };
  hooks.validate = [&]() {
    return ValResult{evaluate_unsup(m, s.val.features, mix_seed(cfg.seed, kSeedValNoise)), json::object()};
  };
  run.summary = run_loop(cfg, hooks);
  load_checkpoint(run.summary.checkpoint_path, m.params);
  const Terms test = evaluate_unsup(m, s.test.features, mix_seed(cfg.seed, kSeedTestNoise));
  run.summary.test_re = test.re;
  run.summary.test_cs = test.cs;
  run.summary.test_score = test.score();
  return run;
}

struct SslRun {
  semisup::SemiSupModel model;
  TrainSummary summary;
};

SslRun train_ssl(const config::ExperimentConfig& cfg, const data::Splits& s) {
  SslRun run{semisup::build_semisup(ssl_spec(cfg, s), &s.train.features), {}};
  semisup::SemiSupModel& m = run.model;
  if (!cfg.init_checkpoint.empty()) load_init(cfg.init_checkpoint, m.params);
  nn::AdamState adam;
  adam.learning_rate = cfg.optimizer.learning_rate;

  const Matrix y_train = labels_one_hot(s.train, cfg);
  const Matrix y_val = labels_one_hot(s.val, cfg);
  std::vector<std::size_t> order = iota_indices(0, s.train.size());
  Rng pick(mix_seed(cfg.seed, kSeedLabelled));
  shuffle(order, pick);
  const auto n_lab = static_cast<std::size_t>(
      std::max(1.0, std::round(cfg.semisup.labelled_fraction * static_cast<double>(order.size()))));
  const std::vector<std::size_t> labelled(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_lab));
  const std::vector<std::size_t> unlabelled(order.begin() + static_cast<std::ptrdiff_t>(n_lab), order.end());
  const bool balanced = cfg.semisup.outputs > 1 && cfg.semisup.classes == 2;
  std::optional<semisup::BalancedBatchIterator> balancer;
  if (balanced) {
    std::vector<int> lab_labels;
    for (std::size_t r : labelled)
      for (std::size_t l = 0; l < s.train.label_cols; ++l) lab_labels.push_back(s.train.label(r, l));
    const std::size_t bs = std::max<std::size_t>(2, cfg.optimizer.batch_size - cfg.optimizer.batch_size % 2);
    balancer.emplace(std::move(lab_labels), cfg.semisup.outputs, bs, mix_seed(cfg.seed, kSeedBalanced));
  }
  std::vector<std::size_t> lab_cycle = labelled;
  std::size_t lab_cursor = lab_cycle.size();
  Rng lab_rng(mix_seed(cfg.seed, kSeedLabelled, 1));
  auto next_labelled = [&]() {
    std::vector<std::size_t> rows;
    if (balanced) {
      for (std::size_t i : balancer->next()) rows.push_back(labelled[i]);
      return rows;
    }
    const std::size_t want = std::min(cfg.optimizer.batch_size, lab_cycle.size());
    while (rows.size() < want) {
      if (lab_cursor == lab_cycle.size()) {
        shuffle(lab_cycle, lab_rng);
        lab_cursor = 0;
      }
      rows.push_back(lab_cycle[lab_cursor++]);
    }
    return rows;
  };
  const bool has_unlabelled = !unlabelled.empty();

  LoopHooks hooks;
  hooks.n_epoch_rows = has_unlabelled ? unlabelled.size() : labelled.size();
  hooks.log_terms = false;
  hooks.params = &m.params;
  hooks.target_weight = cfg.loss.lambda;
  hooks.step = [&](std::size_t epoch, std::size_t batch, const std::vector<std::size_t>& rows,
                   double weight) {
    semisup::SslConfig ssl = cfg.semisup.ssl;
    ssl.lambda = weight;
    Rng rng(mix_seed(mix_seed(cfg.seed, kSeedNoise), epoch, batch));
    auto prepare = [&](const std::vector<std::size_t>& idx) {
      Matrix x = s.train.features.select_rows(idx);
      if (cfg.dataset.binarization == data::Binarization::kDynamic) {
        x = data::binarize(x, data::Binarization::kDynamic, epoch, mix_seed(cfg.seed, kSeedBinarize), batch);
      }
      return x;
    };
    semisup::LabelledBatch lb;
    semisup::UnlabelledBatch ub;
    const std::vector<std::size_t> lrows = has_unlabelled ? next_labelled() : rows;
    lb.x = prepare(lrows);
    lb.y = y_train.select_rows(lrows);
    lb.eps = rng.normal_matrix(lb.x.rows(), m.encoder.latent_dim());
    if (has_unlabelled) {
      std::vector<std::size_t> urows;
      for (std::size_t r : rows) urows.push_back(unlabelled[r]);
      ub.x = prepare(urows);
      ub.eps = rng.normal_matrix(ub.x.rows(), m.encoder.latent_dim());
      if (m.outputs() > 1) ub.gumbel = rng.gumbel_matrix(ub.x.rows(), m.code_width());
    }
    ad::Tape tape;
    const ad::Value loss = semisup::combined_objective(tape, m, lb, ub, ssl);
    StepStats st{loss.item(), 0.0, 0.0};
    check_finite(st.loss, epoch, batch);
    m.params.zero_grad();
    tape.backward(loss);
    nn::adam_step(m.params, adam);
    return st;
  };
  hooks.validate = [&]() {
    ValResult v{evaluate_ssl(m, s.val.features, y_val, mix_seed(cfg.seed, kSeedValNoise)), json::object()};
    v.extra["val_classification_error"] = ssl_error(m, s.val);
    return v;
  };
  run.summary = run_loop(cfg, hooks);
  load_checkpoint(run.summary.checkpoint_path, m.params);
  const Terms test = evaluate_ssl(m, s.test.features, labels_one_hot(s.test, cfg),
                                  mix_seed(cfg.seed, kSeedTestNoise));
  run.summary.test_re = test.re;
  run.summary.test_cs = test.cs;
  run.summary.test_score = test.score();
  run.summary.test_classification_error = ssl_error(m, s.test);
  return run;
}

void write_summary(const config::ExperimentConfig& cfg, const TrainSummary& s) {
  json j;
  j["epochs_run"] = s.epochs_run;
  j["best_epoch"] = s.best_epoch;
  j["best_val_score"] = s.best_val_score;
  j["test_re"] = s.test_re;
  j["test_cs"] = s.test_cs;
  j["test_score"] = s.test_score;
  if (s.test_classification_error) j["test_classification_error"] = *s.test_classification_error;
  std::ofstream out(fs::path(cfg.output_dir) / "summary.json");
  out << j.dump(2) << '\n';
}

}  // namespace

TrainSummary cmd_train(const config::ExperimentConfig& cfg) {
  const data::Splits s = load_data(cfg);
  TrainSummary summary = cfg.semisup.enabled ? train_ssl(cfg, s).summary : train_unsup(cfg, s).summary;
  write_summary(cfg, summary);
  return summary;
}

FitToySummary cmd_fit_toy(const config::ExperimentConfig& cfg) {
  const config::FitToyConfig& f = cfg.fit_toy;
  if (f.steps == 0 || !(f.learning_rate > 0.0) || f.mc_samples == 0 || f.log_every == 0) {
    throw std::invalid_argument("fit_toy: steps, learning_rate, mc_samples and log_every must be positive");
  }
  fs::create_directories(cfg.output_dir);
  const gmm::DiagGMM target({0.5, 0.5}, {gmm::DiagGaussian({-3.0}, {1.0}), gmm::DiagGaussian({3.0}, {1.0})});
  const Matrix target_means(2, 1, std::vector<double>{-3.0, 3.0});
  const Matrix target_vars(2, 1, 1.0);
  const Matrix half(1, 2, std::log(0.5));
  FitToySummary out;

  {
    ad::ParamStore ps;
    ps.add("mean", Matrix::scalar(f.kl_init_mean));
    ps.add("log_std", Matrix::scalar(std::log(f.kl_init_std)));
    Matrix trace(0, 0);
    std::vector<double> rows;
    auto log_row = [&](std::size_t step) {
      const double mu = ps.get("mean").value.item();
      const double sd = std::exp(ps.get("log_std").value.item());
      const double kl = gmm::mc_kl(gmm::DiagGMM::single(gmm::DiagGaussian({mu}, {sd * sd})), target,
                                   4000, mix_seed(cfg.seed, kSeedKlEval));
      rows.insert(rows.end(), {static_cast<double>(step), mu, sd, kl});
      out.kl_mean = mu;
      out.kl_std = sd;
      out.kl_divergence = kl;
    };
    for (std::size_t step = 0; step < f.steps; ++step) {
      if (step % f.log_every == 0) log_row(step);
      Rng rng(mix_seed(cfg.seed, kSeedKlNoise, step));
      ad::Tape tape;
      const ad::Value mu = tape.param(ps.get("mean"));
      const ad::Value log_sd = tape.param(ps.get("log_std"));
      const ad::Value sd = ad::exp(log_sd);
      const ad::Value z = ad::add(mu, ad::mul(sd, tape.constant(rng.normal_matrix(f.mc_samples, 1))));
      const ad::Value u = ad::div(ad::sub(z, mu), sd);
      const ad::Value log_q = ad::add_scalar(ad::neg(ad::add(log_sd, ad::scale(ad::square(u), 0.5))),
                                             -0.5 * std::log(2.0 * std::numbers::pi));
      const ad::Value zero = tape.constant(Matrix(f.mc_samples, 1));
      const ad::Value log_p = ad::logsumexp_rows(ad::add(
          ad::pairwise_log_overlap(z, zero, tape.constant(target_means), tape.constant(target_vars)),
          tape.constant(half)));
      const ad::Value loss = ad::mean(ad::sub(log_q, log_p));
      ps.zero_grad();
      tape.backward(loss);
      nn::sgd_step(ps, f.learning_rate);
    }
    log_row(f.steps);
    data::write_csv((fs::path(cfg.output_dir) / "fit_kl.csv").string(), {"step", "mean", "std", "kl"},
                    Matrix(rows.size() / 4, 4, rows));
  }

  {
    ad::ParamStore ps;
    ps.add("means", Matrix(2, 1, std::vector<double>{f.cs_init_means[0], f.cs_init_means[1]}));
    ps.add("logvars", Matrix(2, 1, 2.0 * std::log(f.cs_init_std)));
    std::vector<double> rows;
    auto current = [&]() {
      const Matrix& m = ps.get("means").value;
      const Matrix& lv = ps.get("logvars").value;
      return gmm::DiagGMM::uniform({gmm::DiagGaussian({m[0]}, {std::exp(lv[0])}),
                                    gmm::DiagGaussian({m[1]}, {std::exp(lv[1])})});
    };
    auto log_row = [&](std::size_t step) {
      const gmm::DiagGMM q = current();
      const double cs = gmm::cs_divergence(q, target);
      rows.insert(rows.end(), {static_cast<double>(step), q.component(0).mean()[0], q.component(1).mean()[0],
                               q.component(0).var()[0], q.component(1).var()[0], cs});
      out.cs_means = {q.component(0).mean()[0], q.component(1).mean()[0]};
      out.cs_vars = {q.component(0).var()[0], q.component(1).var()[0]};
      out.cs_divergence = cs;
    };
    for (std::size_t step = 0; step < f.steps; ++step) {
      if (step % f.log_every == 0) log_row(step);
      ad::Tape tape;
      const ad::Value qm = tape.param(ps.get("means"));
      const ad::Value qv = ad::exp(tape.param(ps.get("logvars")));
      const ad::Value loss = models::cs_divergence_mixtures(
          qm, qv, half, tape.constant(target_means), tape.constant(target_vars), half);
      ps.zero_grad();
      tape.backward(loss);
      nn::sgd_step(ps, f.learning_rate);
    }
    log_row(f.steps);
    data::write_csv((fs::path(cfg.output_dir) / "fit_cs.csv").string(),
                    {"step", "mean0", "mean1", "var0", "var1", "cs"}, Matrix(rows.size() / 6, 6, rows));
  }
  return out;
}

std::vector<SweepRow> cmd_sweep_lambda(const config::ExperimentConfig& cfg,
                                       const std::vector<double>& lambdas) {
  if (lambdas.size() < 2) throw std::invalid_argument("sweep-lambda: need at least two lambda values");
  if (cfg.semisup.enabled) throw std::invalid_argument("sweep-lambda: semi-supervised configs are not supported");
  const data::Splits s = load_data(cfg);
  fs::create_directories(cfg.output_dir);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    config::ExperimentConfig c = cfg;
    c.loss.lambda = lambdas[i];
    c.semisup.ssl.lambda = lambdas[i];
    c.output_dir = (fs::path(cfg.output_dir) / ("lambda_" + std::to_string(i))).string();
    c.validate();
    UnsupRun run = train_unsup(c, s);
    write_summary(c, run.summary);
    const Matrix embed = eval::latent_embed(run.model, s.test.features);
    const gmm::DiagGMM prior = run.model.prior.to_gmm(run.model.params, run.model.encoder);
    Matrix centers(prior.size(), prior.dim());
    for (std::size_t k = 0; k < prior.size(); ++k)
      for (std::size_t d = 0; d < prior.dim(); ++d) centers(k, d) = prior.component(k).mean()[d];
    SweepRow r;
    r.lambda = lambdas[i];
    r.re = run.summary.test_re;
    r.cs = run.summary.test_cs;
    r.score = run.summary.test_score;
    r.prior_distance = eval::mean_nearest_distance(embed, centers);
    r.best_epoch = run.summary.best_epoch;
    rows.push_back(r);
  }
  std::ofstream out(fs::path(cfg.output_dir) / "sweep.csv");
  out << "lambda,re,cs,score,prior_distance,best_epoch\n";
  for (const SweepRow& r : rows) {
    out << data::format_number(r.lambda) << ',' << data::format_number(r.re) << ','
        << data::format_number(r.cs) << ',' << data::format_number(r.score) << ','
        << data::format_number(r.prior_distance) << ',' << r.best_epoch << '\n';
  }
  return rows;
}

json cmd_eval(const config::ExperimentConfig& cfg, const std::string& checkpoint) {
  const data::Splits s = load_data(cfg);
  json j;
  j["n_test"] = s.test.size();
  auto knn = [&](const Matrix& train_embed, const Matrix& test_embed) {
    json errs = json::object();
    if (!s.train.has_labels()) return errs;
    const std::vector<int> train_y = first_output_labels(s.train);
    const std::vector<int> test_y = first_output_labels(s.test);
    for (std::size_t k : cfg.eval.knn_k) {
      if (k > s.train.size()) continue;
      errs[std::to_string(k)] =
          eval::classification_error(eval::knn_classify(train_embed, train_y, test_embed, k), test_y);
    }
    return errs;
  };
  if (cfg.semisup.enabled) {
    semisup::SemiSupModel m = semisup::build_semisup(ssl_spec(cfg, s), &s.train.features);
    load_checkpoint(checkpoint, m.params);
    const Terms t = evaluate_ssl(m, s.test.features, labels_one_hot(s.test, cfg),
                                 mix_seed(cfg.seed, kSeedTestNoise));
    j["test_re"] = t.re;
    j["test_cs"] = t.cs;
    j["model_selection_score"] = t.score();
    j["classification_error"] = ssl_error(m, s.test);
    auto embed = [&](const Matrix& x, std::uint64_t stream) {
      ad::Tape t2;
      const models::EncoderOutput q = m.encoder.encode(t2, m.params, t2.constant(x));
      Matrix z = q.mean.data();
      if (cfg.eval.knn_sampled) {
        Rng rng(mix_seed(cfg.seed, kSeedEmbed, stream));
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += std::sqrt(q.var.data()[i]) * rng.normal();
      }
      return z;
    };
    j["knn_error"] = knn(embed(s.train.features, 0), embed(s.test.features, 1));
  } else {
    models::Autoencoder m = models::build_autoencoder(unsup_spec(cfg, s), &s.train.features);
    load_checkpoint(checkpoint, m.params);
    const Terms t = evaluate_unsup(m, s.test.features, mix_seed(cfg.seed, kSeedTestNoise));
    j["test_re"] = t.re;
    j["test_cs"] = t.cs;
    j["model_selection_score"] = t.score();
    if (cfg.eval.importance_samples > 0 && s.test.size() > 0) {
      const std::vector<double> ll = eval::importance_sampled_ll(
          m, s.test.features, cfg.eval.importance_samples, mix_seed(cfg.seed, kSeedImportance));
      j["is_ll"] = std::accumulate(ll.begin(), ll.end(), 0.0) / static_cast<double>(ll.size());
      j["is_samples"] = cfg.eval.importance_samples;
    }
    auto embed = [&](const Matrix& x, std::uint64_t stream) {
      return cfg.eval.knn_sampled ? eval::latent_embed_sampled(m, x, mix_seed(cfg.seed, kSeedEmbed, stream))
                                  : eval::latent_embed(m, x);
    };
    j["knn_error"] = knn(embed(s.train.features, 0), embed(s.test.features, 1));
  }
  fs::create_directories(cfg.output_dir);
  std::ofstream out(fs::path(cfg.output_dir) / "eval.json");
  out << j.dump(2) << '\n';
  return j;
}

void cmd_sample(const config::ExperimentConfig& cfg, const std::string& checkpoint, std::size_t n,
                std::optional<std::size_t> component, const std::string& out_csv) {
  if (cfg.semisup.enabled) throw std::invalid_argument("sample: semi-supervised models are not supported");
  const data::Splits s = load_data(cfg);
  models::Autoencoder m = models::build_autoencoder(unsup_spec(cfg, s), &s.train.features);
  load_checkpoint(checkpoint, m.params);
  const gmm::DiagGMM prior = m.prior.to_gmm(m.params, m.encoder);
  if (component && *component >= prior.size()) {
    throw std::invalid_argument("sample: component " + std::to_string(*component) +
                                " out of range for a prior with " + std::to_string(prior.size()) +
                                " components");
  }
  std::vector<std::string> header;
  for (std::size_t d = 0; d < m.decoder.data_dim(); ++d) header.push_back("x" + std::to_string(d));
  Matrix out(0, m.decoder.data_dim());
  if (n > 0) {
    const gmm::GmmSamples z = gmm::sample_gmm(prior, n, mix_seed(cfg.seed, kSeedSample), component);
    ad::Tape tape;
    out = m.decoder.mean(tape, m.params, tape.constant(z.points)).data();
  }
  if (!out_csv.empty()) fs::create_directories(fs::path(out_csv).parent_path().empty() ? "." : fs::path(out_csv).parent_path());
  data::write_csv(out_csv, header, out);
}

json cmd_frechet(const std::string& csv_a, const std::string& csv_b) {
  const data::Dataset a = data::load_csv_labeled(csv_a, {});
  const data::Dataset b = data::load_csv_labeled(csv_b, {});
  const eval::FeatureStats sa = eval::FeatureStats::fit(a.features);
  const eval::FeatureStats sb = eval::FeatureStats::fit(b.features);
  return {{"frechet_distance", eval::frechet_distance(sa, sb)}, {"n_a", a.size()}, {"n_b", b.size()},
          {"dim", a.dim()}};
}

json cmd_knn(const std::string& train_csv, const std::string& query_csv, std::size_t k,
             const std::string& out_csv) {
  auto load = [](const std::string& path) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    const std::size_t cols = static_cast<std::size_t>(std::count(first.begin(), first.end(), ',')) + 1;
    if (cols < 2) throw std::invalid_argument("knn: '" + path + "' needs features and a label column");
    return data::load_csv_labeled(path, {cols - 1});
  };
  const data::Dataset train = load(train_csv);
  const data::Dataset query = load(query_csv);
  const std::vector<int> pred = eval::knn_classify(train.features, train.labels, query.features, k);
  if (!out_csv.empty()) {
    std::ofstream out(out_csv);
    if (!out) throw std::runtime_error("cannot write '" + out_csv + "'");
    out << "prediction\n";
    for (int p : pred) out << p << '\n';
  }
  return {{"k", k}, {"n_query", query.size()},
          {"classification_error", eval::classification_error(pred, query.labels)}};
}

}  // namespace csrae::experiment
