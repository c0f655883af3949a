#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "csrae/checkpoint.hpp"
#include "csrae/experiment.hpp"
#include "doctest.h"

using namespace csrae;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("csrae_exp_" + name);
  fs::remove_all(p);
  return p.string();
}

config::ExperimentConfig small_config(const std::string& out, std::size_t epochs) {
  json j = R"({
    "seed": 4,
    "dataset": {"kind": "pinwheel", "n": 400, "split": [200, 100, 100]},
    "model": {"latent_dim": 2, "encoder": [{"units": 16, "activation": "softplus"}],
              "decoder": [{"units": 16, "activation": "softplus"}]},
    "prior": {"type": "mixture", "components": 4},
    "objective": {"type": "mixture_csrae", "lambda": 1},
    "optimizer": {"learning_rate": 0.005, "batch_size": 50, "warmup_epochs": 2, "patience": 0},
    "eval": {"importance_samples": 5, "knn_k": [5]}
  })"_json;
  j["output_dir"] = out;
  j["optimizer"]["epochs"] = epochs;
  return config::parse_config(j);
}

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  std::vector<json> rows;
  for (std::string line; std::getline(in, line);) rows.push_back(json::parse(line));
  return rows;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("zero epochs keeps the initial model") {
  const auto cfg = small_config(scratch("zero"), 0);
  const auto s = experiment::cmd_train(cfg);
  CHECK(s.epochs_run == 0);
  CHECK(s.best_epoch == 0);
  const auto log = read_jsonl(s.metrics_path);
  REQUIRE(log.size() == 1);
  CHECK(log[0]["epoch"] == 0);
  CHECK_FALSE(log[0].contains("train_loss"));
  CHECK(fs::exists(s.checkpoint_path));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "summary.json"));
}

TEST_CASE("training is reproducible and keeps the best checkpoint") {
  const auto a = small_config(scratch("a"), 6);
  const auto b = small_config(scratch("b"), 6);
  const auto sa = experiment::cmd_train(a);
  const auto sb = experiment::cmd_train(b);
  CHECK(slurp(sa.metrics_path) == slurp(sb.metrics_path));
  CHECK(slurp(sa.checkpoint_path) == slurp(sb.checkpoint_path));

  const auto log = read_jsonl(sa.metrics_path);
  REQUIRE(log.size() == 7);
  std::size_t argmin = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i]["epoch"] == i);
    if (log[i]["model_selection_score"].get<double>() < log[argmin]["model_selection_score"].get<double>()) argmin = i;
  }
  CHECK(sa.best_epoch == argmin);
  CHECK(sa.best_val_score == log[argmin]["model_selection_score"].get<double>());
  CHECK(log[1]["weight"].get<double>() < log[3]["weight"].get<double>());
  CHECK(log[1].contains("train_re"));
}

TEST_CASE("patience stops early") {
  auto cfg = small_config(scratch("patience"), 50);
  cfg.optimizer.learning_rate = 1e-300;  // updates vanish in rounding, so the score stalls
  cfg.optimizer.patience = 2;
  const auto s = experiment::cmd_train(cfg);
  CHECK(s.epochs_run < 50);
  CHECK(s.epochs_run - s.best_epoch == 2);
}

TEST_CASE("sample and eval use the trained checkpoint") {
  auto cfg = small_config(scratch("sample"), 3);
  const auto s = experiment::cmd_train(cfg);
  const std::string out = (fs::path(cfg.output_dir) / "samples.csv").string();
  experiment::cmd_sample(cfg, s.checkpoint_path, 0, std::nullopt, out);
  CHECK(slurp(out) == "x0,x1\n");
  experiment::cmd_sample(cfg, s.checkpoint_path, 5, 2, out);
  std::ifstream in(out);
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 6);
  CHECK_THROWS_WITH(experiment::cmd_sample(cfg, s.checkpoint_path, 5, 4, out), doctest::Contains("component 4"));

  const json e = experiment::cmd_eval(cfg, s.checkpoint_path);
  CHECK(e["n_test"] == 100);
  CHECK(e.contains("is_ll"));
  CHECK(e["knn_error"].contains("5"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "eval.json"));
}

TEST_CASE("eval kNN separates a trained pinwheel embedding") {
  auto cfg = small_config(scratch("knn"), 40);
  const auto s = experiment::cmd_train(cfg);
  const json e = experiment::cmd_eval(cfg, s.checkpoint_path);
  CHECK(e["knn_error"]["5"].get<double>() < 0.1);
  cfg.eval.knn_sampled = true;
  const json sampled = experiment::cmd_eval(cfg, s.checkpoint_path);
  CHECK(sampled["knn_error"]["5"] != e["knn_error"]["5"]);
  CHECK(sampled == experiment::cmd_eval(cfg, s.checkpoint_path));
}

TEST_CASE("sweep requires two lambdas") {
  auto cfg = small_config(scratch("sweep"), 1);
  CHECK_THROWS(experiment::cmd_sweep_lambda(cfg, {1.0}));
  const auto rows = experiment::cmd_sweep_lambda(cfg, {0.5, 2.0});
  CHECK(rows.size() == 2);
  CHECK(rows[1].lambda == 2.0);
  std::ifstream in(fs::path(cfg.output_dir) / "sweep.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 3);
}

TEST_CASE("fit-toy writes trajectories") {
  auto cfg = small_config(scratch("toy"), 1);
  cfg.fit_toy.steps = 200;
  cfg.fit_toy.log_every = 50;
  const auto s = experiment::cmd_fit_toy(cfg);
  CHECK(std::isfinite(s.kl_divergence));
  CHECK(s.cs_divergence >= 0.0);
  CHECK(fs::exists(fs::path(cfg.output_dir) / "fit_kl.csv"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "fit_cs.csv"));
  cfg.fit_toy.steps = 0;
  CHECK_THROWS(experiment::cmd_fit_toy(cfg));
}

TEST_CASE("frechet and knn commands read CSV files") {
  const std::string dir = scratch("csv");
  fs::create_directories(dir);
  const std::string a = dir + "/a.csv", b = dir + "/b.csv";
  {
    std::ofstream(a) << "0,0\n1,0\n2,1\n3,1\n";
    std::ofstream(b) << "0.1,0\n2.9,1\n";
  }
  const json k = experiment::cmd_knn(a, b, 1, "");
  CHECK(k["classification_error"] == 0.0);
  const json f = experiment::cmd_frechet(a, a);
  CHECK(std::abs(f["frechet_distance"].get<double>()) < 1e-10);
}
