#include "csrae/config.hpp"
#include "doctest.h"

using namespace csrae;
using namespace csrae::config;
using nlohmann::json;

TEST_CASE("defaults") {
  const ExperimentConfig c = parse_config(json::object());
  CHECK(c.optimizer.learning_rate == 5e-4);
  CHECK(c.optimizer.batch_size == 100);
  CHECK(c.optimizer.patience == 100);
  CHECK(c.dataset.kind == "pinwheel");
  CHECK(c.eval.knn_k == std::vector<std::size_t>{3, 5, 10});
  CHECK(c.semisup.enabled == false);
  CHECK_FALSE(c.eval.knn_sampled);
  CHECK(parse_config(R"({"eval": {"knn_embedding": "sample"}})"_json).eval.knn_sampled);
  CHECK_THROWS(parse_config(R"({"eval": {"knn_embedding": "median"}})"_json));
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("unknown keys are rejected") {
  CHECK_THROWS_WITH(parse_config(json{{"sed", 1}}), doctest::Contains("sed"));
  CHECK_THROWS_WITH(parse_config(json{{"optimizer", {{"lr", 0.1}}}}), doctest::Contains("lr"));
  CHECK_THROWS(parse_config(json{{"model", {{"encoder", {{{"units", 3}, {"act", "relu"}}}}}}}));
  CHECK_THROWS(parse_config(json{{"seed", "one"}}));
}

TEST_CASE("full document") {
  const json j = R"({
    "seed": 9, "output_dir": "out",
    "dataset": {"kind": "two_gaussian", "n": 500, "split": [300, 100, 100]},
    "model": {"latent_dim": 3, "encoder": [{"units": 8, "activation": "softplus"}], "likelihood": "gaussian"},
    "prior": {"type": "mixture", "components": 5},
    "objective": {"type": "mixture_csrae", "lambda": 2.5},
    "optimizer": {"epochs": 7, "warmup_epochs": 2},
    "semisup": {"classes": 4, "classifier": [{"units": 6}], "tau": 0.3, "mode": "literal_sum"},
    "sweep": {"lambdas": [0.5, 5]}
  })"_json;
  const ExperimentConfig c = parse_config(j);
  CHECK(c.seed == 9);
  CHECK(c.model.seed == 9);
  CHECK(c.dataset.n == 500);
  CHECK(c.dataset.split.value() == std::array<std::size_t, 3>{300, 100, 100});
  CHECK(c.model.latent_dim == 3);
  REQUIRE(c.model.encoder_hidden.size() == 1);
  CHECK(c.model.encoder_hidden[0].activation == nn::Activation::kSoftplus);
  CHECK(c.model.prior.kind == models::PriorKind::kMixture);
  CHECK(c.model.prior.components == 5);
  CHECK(c.loss.objective == models::Objective::kMixtureCsrae);
  CHECK(c.semisup.enabled);
  CHECK(c.semisup.ssl.lambda == 2.5);
  CHECK(c.semisup.ssl.mode == semisup::UnlabelledMode::kLiteralSum);
  CHECK(c.semisup.classifier_hidden[0].activation == nn::Activation::kRelu);
  CHECK(c.sweep_lambdas == std::vector<double>{0.5, 5.0});
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("prior means and variances") {
  const ExperimentConfig c = parse_config(
      R"({"prior": {"type": "mixture", "means": [[0, 0], [1, 1]], "vars": [[0.1, 0.1], [0.2, 0.2]], "trainable": false}})"_json);
  CHECK(c.model.prior.components == 2);
  CHECK(c.model.prior.means(1, 0) == 1.0);
  CHECK(c.model.prior.vars(1, 1) == 0.2);
  CHECK_FALSE(c.model.prior.trainable);
  CHECK_THROWS(parse_config(R"({"prior": {"means": [[0, 0]]}})"_json));
  CHECK_THROWS(parse_config(R"({"prior": {"means": [[0, 0], [1]], "vars": [[1, 1], [1, 1]]}})"_json));
  CHECK_THROWS(parse_config(R"({"prior": {"means": [], "vars": []}})"_json));
}

TEST_CASE("validation names the field") {
  auto bad = [](const json& j, const char* field) {
    CHECK_THROWS_WITH(parse_config(j).validate(), doctest::Contains(field));
  };
  bad(R"({"objective": {"lambda": -1}})"_json, "objective.lambda");
  bad(R"({"optimizer": {"learning_rate": 0}})"_json, "learning_rate");
  bad(R"({"optimizer": {"batch_size": 0}})"_json, "batch_size");
  bad(R"({"model": {"latent_dim": 0}})"_json, "latent_dim");
  bad(R"({"dataset": {"kind": "idx", "images": "/nonexistent/a", "labels": "/nonexistent/b"}})"_json,
      "dataset.images");
  bad(R"({"dataset": {"kind": "parquet"}})"_json, "parquet");
  bad(R"({"semisup": {"labelled_fraction": 0}})"_json, "labelled_fraction");
  bad(R"({"sweep": {"lambdas": [1, -2]}})"_json, "sweep.lambdas");
  bad(R"({"eval": {"knn_k": [0]}})"_json, "knn_k");
  CHECK_THROWS(load_config("/nonexistent/config.json"));
}

TEST_CASE("gmm json round trip") {
  const json j = R"({"weights": [0.25, 0.75], "means": [[0, 1], [2, 3]], "vars": [[1, 2], [0.5, 0.5]]})"_json;
  const gmm::DiagGMM g = gmm_from_json(j);
  CHECK(g.size() == 2);
  CHECK(g.weights()[1] == 0.75);
  CHECK(gmm_to_json(g) == j);
  const gmm::DiagGMM u = gmm_from_json(R"({"means": [[0], [1], [2], [3]], "vars": [[1], [1], [1], [1]]})"_json);
  CHECK(u.weights()[2] == 0.25);
  CHECK_THROWS(gmm_from_json(R"({"means": [[0]], "vars": [[1], [1]]})"_json));
  CHECK_THROWS(gmm_from_json(R"({"means": [[0]], "vars": [[-1]]})"_json));
  CHECK_THROWS(gmm_from_json(R"({"weights": [0.5], "means": [[0]], "vars": [[1]]})"_json));
}
