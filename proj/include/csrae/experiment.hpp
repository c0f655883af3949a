#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csrae/config.hpp"
#include "csrae/data.hpp"
#include "json.hpp"

namespace csrae::experiment {

/// Loads or generates the configured dataset and splits it with the config seed.
data::Splits load_data(const config::ExperimentConfig& cfg);

struct TrainSummary {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_score = 0.0;
  double test_re = 0.0;
  double test_cs = 0.0;
  double test_score = 0.0;
  std::optional<double> test_classification_error;
  std::string metrics_path;
  std::string checkpoint_path;
};

/// Trains per the config, writing <out>/metrics.jsonl (one record per epoch,
/// epoch 0 being the initial model), <out>/best.ckpt and <out>/summary.json.
TrainSummary cmd_train(const config::ExperimentConfig& cfg);

struct FitToySummary {
  double kl_mean = 0.0;
  double kl_std = 0.0;
  double kl_divergence = 0.0;
  std::array<double, 2> cs_means{};
  std::array<double, 2> cs_vars{};
  double cs_divergence = 0.0;
};

/// Gradient descent fits of a single Gaussian (Monte-Carlo KL) and a
/// two-component mixture (closed-form CS) to 0.5 N(-3, 1) + 0.5 N(3, 1).
/// Writes <out>/fit_kl.csv and <out>/fit_cs.csv.
FitToySummary cmd_fit_toy(const config::ExperimentConfig& cfg);

struct SweepRow {
  double lambda = 0.0;
  double re = 0.0;
  double cs = 0.0;
  double score = 0.0;
  /// Mean distance from test posterior means to the nearest prior mean.
  double prior_distance = 0.0;
  std::size_t best_epoch = 0;
};

/// One training run per lambda under <out>/lambda_<i>, summarized in <out>/sweep.csv.
std::vector<SweepRow> cmd_sweep_lambda(const config::ExperimentConfig& cfg,
                                       const std::vector<double>& lambdas);

/// Test-split metrics of a checkpoint; also written to <out>/eval.json.
nlohmann::json cmd_eval(const config::ExperimentConfig& cfg, const std::string& checkpoint);

/// Decoder means of n prior draws (optionally from one component) as CSV.
void cmd_sample(const config::ExperimentConfig& cfg, const std::string& checkpoint, std::size_t n,
                std::optional<std::size_t> component, const std::string& out_csv);

/// Squared Frechet distance between Gaussians fitted to two feature CSVs.
nlohmann::json cmd_frechet(const std::string& csv_a, const std::string& csv_b);

/// kNN predictions for `query_csv` from `train_csv`; the last column of each file
/// is the label. Predictions go to `out_csv` when non-empty.
nlohmann::json cmd_knn(const std::string& train_csv, const std::string& query_csv, std::size_t k,
                       const std::string& out_csv);

}  // namespace csrae::experiment
