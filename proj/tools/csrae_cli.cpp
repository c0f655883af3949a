// csrae command-line front end.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csrae/config.hpp"
#include "csrae/experiment.hpp"
#include "json.hpp"

using nlohmann::json;
using namespace csrae;

namespace {

std::vector<double> parse_lambda_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw std::invalid_argument("--lambda-list: bad value '" + item + "'");
    out.push_back(v);
  }
  return out;
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

config::ExperimentConfig resolve(const Common& c) {
  config::ExperimentConfig cfg =
      c.config_path.empty() ? config::parse_config(json::object()) : config::load_config(c.config_path);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.model.seed = *c.seed;
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool config_required) {
  auto* opt = app->add_option("--config", c.config_path, "experiment config (JSON)");
  if (config_required) opt->required();
  app->add_option("--seed", c.seed, "override the config seed");
  app->add_option("--out", c.out, "override the output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cauchy-Schwarz regularized autoencoders"};
  app.require_subcommand(1);
  std::string command;

  Common train_c, toy_c, sweep_c, eval_c, sample_c;
  auto* train = app.add_subcommand("train", "train a model, writing metrics.jsonl and best.ckpt");
  add_common(train, train_c, true);

  auto* toy = app.add_subcommand("fit-toy", "fit KL and CS toy models to a two-Gaussian target");
  add_common(toy, toy_c, false);

  std::string lambda_list;
  auto* sweep = app.add_subcommand("sweep-lambda", "train once per lambda and summarize");
  add_common(sweep, sweep_c, true);
  sweep->add_option("--lambda-list", lambda_list, "comma separated lambda values");

  std::string eval_ckpt;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(ev, eval_c, true);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();

  std::string sample_ckpt;
  std::string sample_csv = "samples.csv";
  std::size_t sample_n = 100;
  std::optional<std::size_t> component;
  auto* sample = app.add_subcommand("sample", "decode prior samples to CSV");
  add_common(sample, sample_c, true);
  sample->add_option("--checkpoint", sample_ckpt, "checkpoint file")->required();
  sample->add_option("-n,--n", sample_n, "number of samples");
  sample->add_option("--component", component, "draw from one prior component");
  sample->add_option("--csv", sample_csv, "output CSV path");

  std::string fa, fb;
  auto* fr = app.add_subcommand("frechet", "Frechet distance between Gaussians fitted to two CSVs");
  fr->add_option("--a", fa, "first feature CSV")->required();
  fr->add_option("--b", fb, "second feature CSV")->required();

  std::string knn_train, knn_query, knn_out;
  std::size_t knn_k = 5;
  auto* knn = app.add_subcommand("knn", "kNN classification; last CSV column is the label");
  knn->add_option("--train", knn_train, "training CSV")->required();
  knn->add_option("--query", knn_query, "query CSV")->required();
  knn->add_option("-k,--k", knn_k, "neighbours");
  knn->add_option("--predictions", knn_out, "prediction CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", e.what()}, {"kind", "usage"}}.dump() << '\n';
    return 2;
  }

  try {
    if (*train) {
      command = "train";
      const auto s = experiment::cmd_train(resolve(train_c));
      json j{{"epochs_run", s.epochs_run}, {"best_epoch", s.best_epoch},
             {"best_val_score", s.best_val_score}, {"test_re", s.test_re},
             {"test_cs", s.test_cs}, {"test_score", s.test_score},
             {"checkpoint", s.checkpoint_path}, {"metrics", s.metrics_path}};
      if (s.test_classification_error) j["test_classification_error"] = *s.test_classification_error;
      std::cout << j.dump(2) << '\n';
    } else if (*toy) {
      command = "fit-toy";
      const auto s = experiment::cmd_fit_toy(resolve(toy_c));
      std::cout << json{{"kl_mean", s.kl_mean}, {"kl_std", s.kl_std}, {"kl", s.kl_divergence},
                        {"cs_means", s.cs_means}, {"cs_vars", s.cs_vars}, {"cs", s.cs_divergence}}
                       .dump(2)
                << '\n';
    } else if (*sweep) {
      command = "sweep-lambda";
      const auto cfg = resolve(sweep_c);
      const auto lambdas = lambda_list.empty() ? cfg.sweep_lambdas : parse_lambda_list(lambda_list);
      json rows = json::array();
      for (const auto& r : experiment::cmd_sweep_lambda(cfg, lambdas)) {
        rows.push_back({{"lambda", r.lambda}, {"re", r.re}, {"cs", r.cs}, {"score", r.score},
                        {"prior_distance", r.prior_distance}, {"best_epoch", r.best_epoch}});
      }
      std::cout << rows.dump(2) << '\n';
    } else if (*ev) {
      command = "eval";
      std::cout << experiment::cmd_eval(resolve(eval_c), eval_ckpt).dump(2) << '\n';
    } else if (*sample) {
      command = "sample";
      experiment::cmd_sample(resolve(sample_c), sample_ckpt, sample_n, component, sample_csv);
    } else if (*fr) {
      command = "frechet";
      std::cout << experiment::cmd_frechet(fa, fb).dump(2) << '\n';
    } else if (*knn) {
      command = "knn";
      std::cout << experiment::cmd_knn(knn_train, knn_query, knn_k, knn_out).dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"command", command}}.dump() << '\n';
    return 1;
  }
  return 0;
}
