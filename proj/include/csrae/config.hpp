#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csrae/data.hpp"
#include "csrae/gmm.hpp"
#include "csrae/models.hpp"
#include "csrae/nn.hpp"
#include "csrae/semisup.hpp"
#include "json.hpp"

namespace csrae::config {

struct DatasetConfig {
  std::string kind = "pinwheel";  // pinwheel | two_gaussian | idx | csv
  data::PinwheelSpec pinwheel;
  std::size_t n = 2000;  // two_gaussian
  std::string images;    // idx
  std::string labels;    // idx
  std::string path;      // csv
  std::vector<std::size_t> label_columns;
  bool header = false;
  /// train/val/test sizes; unset means 75/12.5/12.5 percent (MNIST sizes for idx).
  std::optional<std::array<std::size_t, 3>> split;
  data::Binarization binarization = data::Binarization::kNone;
};

struct OptimizerConfig {
  double learning_rate = 5e-4;
  std::size_t batch_size = 100;
  std::size_t epochs = 400;
  std::size_t warmup_epochs = 100;
  std::size_t patience = 100;
};

struct SemiSupConfig {
  bool enabled = false;
  double labelled_fraction = 0.1;
  std::size_t classes = 2;
  std::size_t outputs = 1;
  std::size_t embedding_dim = 0;
  std::vector<nn::LayerSpec> classifier_hidden;
  semisup::SslConfig ssl;
};

struct EvalConfig {
  std::size_t importance_samples = 100;
  std::vector<std::size_t> knn_k = {3, 5, 10};
  /// kNN features: posterior means, or one reparameterized sample per row.
  bool knn_sampled = false;
};

struct FitToyConfig {
  std::size_t steps = 20000;
  double learning_rate = 0.001;
  std::size_t mc_samples = 100;
  double kl_init_mean = 0.5;
  double kl_init_std = 1.0;
  std::array<double, 2> cs_init_means = {-1.0, 1.0};
  double cs_init_std = 1.0;
  std::size_t log_every = 100;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "run";
  DatasetConfig dataset;
  models::AutoencoderSpec model;  // seed is filled from `seed`
  models::LossConfig loss;
  OptimizerConfig optimizer;
  SemiSupConfig semisup;
  EvalConfig eval;
  FitToyConfig fit_toy;
  std::vector<double> sweep_lambdas;
  std::string init_checkpoint;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Parses a config document. Missing fields take the defaults above; unknown
/// top-level keys are rejected.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

std::vector<nn::LayerSpec> parse_layers(const nlohmann::json& j);

/// {"weights": [...], "means": [[...], ...], "vars": [[...], ...]}
gmm::DiagGMM gmm_from_json(const nlohmann::json& j);
nlohmann::json gmm_to_json(const gmm::DiagGMM& g);

}  // namespace csrae::config
