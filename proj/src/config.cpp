#include "csrae/config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

namespace csrae::config {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (allowed.count(key) == 0) throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument(std::string("config field '") + key + "': " + e.what());
    }
  }
}

void require_file(const std::string& path, const std::string& field) {
  if (path.empty() || !std::filesystem::exists(path)) {
    throw std::invalid_argument("config: " + field + " '" + path + "' does not exist");
  }
}

void require_weight(double v, const std::string& field) {
  if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("config: " + field + " must be finite and >= 0");
}

Matrix read_rows(const json& j, const std::string& field) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty() || rows.front().empty()) throw std::invalid_argument("config: " + field + " is empty");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw std::invalid_argument("config: " + field + " is ragged");
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

}  // namespace

std::vector<nn::LayerSpec> parse_layers(const json& j) {
  if (!j.is_array()) throw std::invalid_argument("layers: expected an array");
  std::vector<nn::LayerSpec> out;
  for (const auto& l : j) {
    check_keys(l, "layer", {"units", "activation"});
    if (!l.contains("units")) throw std::invalid_argument("layer: missing 'units'");
    const std::size_t units = l.at("units").get<std::size_t>();
    const std::string act = l.value("activation", std::string("relu"));
    out.push_back({units, nn::activation_from_string(act)});
  }
  return out;
}

ExperimentConfig parse_config(const json& j) {
  check_keys(j, "config", {"seed", "output_dir", "dataset", "model", "prior", "objective",
                           "optimizer", "semisup", "eval", "fit_toy", "sweep", "init_checkpoint"});
  ExperimentConfig c;
  read(j, "seed", c.seed);
  read(j, "output_dir", c.output_dir);
  read(j, "init_checkpoint", c.init_checkpoint);

  // Defaults: the small pinwheel architecture.
  c.model.latent_dim = 2;
  c.model.encoder_hidden = {{5, nn::Activation::kSoftplus}, {10, nn::Activation::kSoftplus}};
  c.model.decoder_hidden = {{10, nn::Activation::kSoftplus}, {5, nn::Activation::kIdentity}};
  c.model.likelihood = models::Likelihood::kGaussian;

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset", {"kind", "n", "clusters", "radial_std", "tangential_std", "rate",
                              "images", "labels", "path", "label_columns", "header", "split",
                              "binarization"});
    read(d, "kind", c.dataset.kind);
    read(d, "n", c.dataset.n);
    c.dataset.pinwheel.n = d.value("n", c.dataset.pinwheel.n);
    read(d, "clusters", c.dataset.pinwheel.clusters);
    read(d, "radial_std", c.dataset.pinwheel.radial_std);
    read(d, "tangential_std", c.dataset.pinwheel.tangential_std);
    read(d, "rate", c.dataset.pinwheel.rate);
    read(d, "images", c.dataset.images);
    read(d, "labels", c.dataset.labels);
    read(d, "path", c.dataset.path);
    read(d, "label_columns", c.dataset.label_columns);
    read(d, "header", c.dataset.header);
    if (d.contains("split")) c.dataset.split = d.at("split").get<std::array<std::size_t, 3>>();
    if (d.contains("binarization")) {
      c.dataset.binarization = data::binarization_from_string(d.at("binarization").get<std::string>());
    }
  }
  if (c.dataset.kind == "idx") c.model.likelihood = models::Likelihood::kBernoulli;

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"latent_dim", "encoder", "decoder", "likelihood"});
    read(m, "latent_dim", c.model.latent_dim);
    if (m.contains("encoder")) c.model.encoder_hidden = parse_layers(m.at("encoder"));
    if (m.contains("decoder")) c.model.decoder_hidden = parse_layers(m.at("decoder"));
    if (m.contains("likelihood")) {
      c.model.likelihood = models::likelihood_from_string(m.at("likelihood").get<std::string>());
    }
  }
  if (j.contains("prior")) {
    const json& p = j.at("prior");
    check_keys(p, "prior", {"type", "components", "means", "vars", "trainable"});
    if (p.contains("type")) c.model.prior.kind = models::prior_kind_from_string(p.at("type").get<std::string>());
    read(p, "components", c.model.prior.components);
    read(p, "trainable", c.model.prior.trainable);
    if (p.contains("means") != p.contains("vars")) {
      throw std::invalid_argument("config: prior.means and prior.vars go together");
    }
    if (p.contains("means")) {
      c.model.prior.means = read_rows(p.at("means"), "prior.means");
      c.model.prior.vars = read_rows(p.at("vars"), "prior.vars");
      if (!p.contains("components")) c.model.prior.components = c.model.prior.means.rows();
    }
  }
  if (j.contains("objective")) {
    const json& o = j.at("objective");
    check_keys(o, "objective", {"type", "lambda", "beta", "importance_samples"});
    if (o.contains("type")) c.loss.objective = models::objective_from_string(o.at("type").get<std::string>());
    read(o, "lambda", c.loss.lambda);
    read(o, "beta", c.loss.beta);
    read(o, "importance_samples", c.loss.importance_samples);
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    check_keys(o, "optimizer", {"learning_rate", "batch_size", "epochs", "warmup_epochs", "patience"});
    read(o, "learning_rate", c.optimizer.learning_rate);
    read(o, "batch_size", c.optimizer.batch_size);
    read(o, "epochs", c.optimizer.epochs);
    read(o, "warmup_epochs", c.optimizer.warmup_epochs);
    read(o, "patience", c.optimizer.patience);
  }
  c.loss.warmup_epochs = c.optimizer.warmup_epochs;
  if (j.contains("semisup")) {
    const json& s = j.at("semisup");
    check_keys(s, "semisup", {"enabled", "labelled_fraction", "classes", "outputs", "embedding_dim",
                              "classifier", "alpha", "beta", "tau", "class_prior", "mode"});
    c.semisup.enabled = s.value("enabled", true);
    read(s, "labelled_fraction", c.semisup.labelled_fraction);
    read(s, "classes", c.semisup.classes);
    read(s, "outputs", c.semisup.outputs);
    read(s, "embedding_dim", c.semisup.embedding_dim);
    if (s.contains("classifier")) c.semisup.classifier_hidden = parse_layers(s.at("classifier"));
    read(s, "alpha", c.semisup.ssl.alpha);
    read(s, "beta", c.semisup.ssl.beta);
    read(s, "tau", c.semisup.ssl.tau);
    read(s, "class_prior", c.semisup.ssl.class_prior);
    if (s.contains("mode")) {
      c.semisup.ssl.mode = semisup::unlabelled_mode_from_string(s.at("mode").get<std::string>());
    }
  }
  c.semisup.ssl.lambda = c.loss.lambda;
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval", {"importance_samples", "knn_k", "knn_embedding"});
    read(e, "importance_samples", c.eval.importance_samples);
    read(e, "knn_k", c.eval.knn_k);
    if (e.contains("knn_embedding")) {
      const std::string mode = e.at("knn_embedding").get<std::string>();
      if (mode != "mean" && mode != "sample") {
        throw std::invalid_argument("config: eval.knn_embedding must be 'mean' or 'sample'");
      }
      c.eval.knn_sampled = mode == "sample";
    }
  }
  if (j.contains("fit_toy")) {
    const json& f = j.at("fit_toy");
    check_keys(f, "fit_toy", {"steps", "learning_rate", "mc_samples", "kl_init_mean", "kl_init_std",
                              "cs_init_means", "cs_init_std", "log_every"});
    read(f, "steps", c.fit_toy.steps);
    read(f, "learning_rate", c.fit_toy.learning_rate);
    read(f, "mc_samples", c.fit_toy.mc_samples);
    read(f, "kl_init_mean", c.fit_toy.kl_init_mean);
    read(f, "kl_init_std", c.fit_toy.kl_init_std);
    read(f, "cs_init_means", c.fit_toy.cs_init_means);
    read(f, "cs_init_std", c.fit_toy.cs_init_std);
    read(f, "log_every", c.fit_toy.log_every);
  }
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    check_keys(s, "sweep", {"lambdas"});
    read(s, "lambdas", c.sweep_lambdas);
  }
  c.model.seed = c.seed;
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config '" + path + "': " + e.what());
  }
  return parse_config(j);
}

void ExperimentConfig::validate() const {
  const std::string& k = dataset.kind;
  if (k == "idx") {
    require_file(dataset.images, "dataset.images");
    require_file(dataset.labels, "dataset.labels");
  } else if (k == "csv") {
    require_file(dataset.path, "dataset.path");
  } else if (k != "pinwheel" && k != "two_gaussian") {
    throw std::invalid_argument("config: unknown dataset kind '" + k + "'");
  }
  if (!init_checkpoint.empty()) require_file(init_checkpoint, "init_checkpoint");
  if (model.latent_dim == 0) throw std::invalid_argument("config: model.latent_dim must be >= 1");
  require_weight(loss.lambda, "objective.lambda");
  require_weight(loss.beta, "objective.beta");
  if (loss.importance_samples == 0) throw std::invalid_argument("config: objective.importance_samples must be >= 1");
  if (model.prior.components == 0) throw std::invalid_argument("config: prior.components must be >= 1");
  if (!(optimizer.learning_rate > 0.0) || !std::isfinite(optimizer.learning_rate)) {
    throw std::invalid_argument("config: optimizer.learning_rate must be > 0");
  }
  if (optimizer.batch_size == 0) throw std::invalid_argument("config: optimizer.batch_size must be >= 1");
  if (semisup.enabled) {
    if (!(semisup.labelled_fraction > 0.0 && semisup.labelled_fraction <= 1.0)) {
      throw std::invalid_argument("config: semisup.labelled_fraction must be in (0, 1]");
    }
    semisup.ssl.validate(semisup.classes);
  }
  for (double l : sweep_lambdas) require_weight(l, "sweep.lambdas");
  for (std::size_t kk : eval.knn_k) {
    if (kk == 0) throw std::invalid_argument("config: eval.knn_k entries must be >= 1");
  }
}

gmm::DiagGMM gmm_from_json(const json& j) {
  check_keys(j, "gmm", {"weights", "means", "vars"});
  const auto means = j.at("means").get<std::vector<std::vector<double>>>();
  const auto vars = j.at("vars").get<std::vector<std::vector<double>>>();
  if (means.size() != vars.size()) throw std::invalid_argument("gmm: means and vars differ in length");
  std::vector<gmm::DiagGaussian> comps;
  for (std::size_t k = 0; k < means.size(); ++k) comps.emplace_back(means[k], vars[k]);
  if (!j.contains("weights")) return gmm::DiagGMM::uniform(std::move(comps));
  return gmm::DiagGMM(j.at("weights").get<std::vector<double>>(), std::move(comps));
}

json gmm_to_json(const gmm::DiagGMM& g) {
  json means = json::array();
  json vars = json::array();
  for (const auto& c : g.components()) {
    means.push_back(c.mean());
    vars.push_back(c.var());
  }
  return {{"weights", g.weights()}, {"means", means}, {"vars", vars}};
}

}  // namespace csrae::config
