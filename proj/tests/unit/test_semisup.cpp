#include <cmath>
#include <set>
#include <stdexcept>

#include "../common/fixtures.hpp"
#include "csrae/semisup.hpp"
#include "doctest.h"

using namespace csrae;
using namespace csrae::semisup;

namespace {

Matrix labels_for(std::size_t n, std::size_t classes, std::size_t outputs, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> y(n * outputs);
  for (int& v : y) v = static_cast<int>(rng.below(classes));
  return one_hot(y, outputs, classes);
}

double classifier_grad_norm(SemiSupModel& m) {
  double s = 0.0;
  for (auto& p : m.params)
    if (p.name.rfind("classifier", 0) == 0)
      for (double g : p.grad.values()) s += g * g;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("one_hot and validation") {
  const std::vector<int> y = {1, 0, 2, 1};
  const Matrix m = one_hot(y, 2, 3);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 6);
  CHECK(m(0, 1) == 1.0);
  CHECK(m(0, 3) == 1.0);
  CHECK(m(1, 2) == 1.0);
  CHECK(m(1, 4) == 1.0);
  CHECK_NOTHROW(validate_one_hot(m, 2, 3));
  Matrix bad = m;
  bad(1, 5) = 1.0;
  CHECK_THROWS(validate_one_hot(bad, 2, 3));
  CHECK_THROWS(validate_one_hot(m, 1, 6 + 1));
  const std::vector<int> out_of_range = {3};
  CHECK_THROWS_WITH(one_hot(out_of_range, 1, 3), doctest::Contains("row 0"));
}

TEST_CASE("categorical KL") {
  const double p[] = {0.7, 0.3};
  const double u[] = {0.5, 0.5};
  CHECK(categorical_kl(p, u) == doctest::Approx(0.08228287850505178).epsilon(1e-13));
  CHECK(categorical_kl(u, u) == 0.0);
  ad::Tape t;
  const ad::Value kl = categorical_kl_rows(t.constant(Matrix::from_rows({{std::log(0.7), std::log(0.3)}, {0.0, 0.0}})),
                                           std::vector<double>{0.5, 0.5}, 1);
  CHECK(kl.data()(0, 0) == doctest::Approx(0.08228287850505178).epsilon(1e-12));
  CHECK(std::abs(kl.data()(1, 0)) < 1e-15);
}

TEST_CASE("ssl config validation") {
  SslConfig c;
  CHECK_NOTHROW(c.validate(3));
  c.tau = 0.0;
  CHECK_THROWS(c.validate(3));
  c = {};
  c.beta = -1;
  CHECK_THROWS(c.validate(3));
  c = {};
  c.class_prior = {0.5, 0.5};
  CHECK_THROWS(c.validate(3));
  c.class_prior = {0.2, 0.2, 0.2};
  CHECK_THROWS(c.validate(3));
  CHECK(unlabelled_mode_from_string("literal_sum") == UnlabelledMode::kLiteralSum);
  CHECK_THROWS(unlabelled_mode_from_string("sum"));
}

TEST_CASE("labelled loss special cases") {
  auto m = fixtures::tiny_semisup(3, 1, 1);
  const Matrix x = fixtures::normal(6, 3, 2);
  const Matrix y = labels_for(6, 3, 1, 3);
  const Matrix eps = fixtures::normal(6, 2, 4);
  SslConfig cfg;
  cfg.lambda = 0.0;
  cfg.beta = 0.0;
  ad::Tape t;
  const double pure = labelled_loss(t, m, x, y, cfg, eps).item();

  // uniform classifier and uniform prior: the KL term vanishes
  for (auto& p : m.params)
    if (p.name.rfind("classifier", 0) == 0) p.value.fill(0.0);
  cfg.beta = 5.0;
  ad::Tape t2;
  CHECK(labelled_loss(t2, m, x, y, cfg, eps).item() == doctest::Approx(pure).epsilon(1e-14));
  ad::Tape t3;
  CHECK_THROWS(labelled_loss(t3, m, x, Matrix(6, 3), cfg, eps));
}

TEST_CASE("unlabelled loss with one class equals the labelled loss") {
  auto m = fixtures::tiny_semisup(1, 1, 5);
  const Matrix x = fixtures::normal(4, 3, 6);
  const Matrix eps = fixtures::normal(4, 2, 7);
  SslConfig cfg;
  ad::Tape t1, t2;
  CHECK(unlabelled_loss(t1, m, x, cfg, eps).item() ==
        doctest::Approx(labelled_loss(t2, m, x, Matrix(4, 1, 1.0), cfg, eps).item()).epsilon(1e-13));
}

TEST_CASE("confident classifier collapses the q-weighted sum onto one class") {
  auto m = fixtures::tiny_semisup(3, 1, 8);
  auto& head_b = m.params.get("classifier.1.b").value;
  auto& head_w = m.params.get("classifier.1.W").value;
  head_w.fill(0.0);
  head_b = Matrix::from_rows({{0.0, 60.0, 0.0}});
  const Matrix x = fixtures::normal(4, 3, 9);
  const Matrix eps = fixtures::normal(4, 2, 10);
  SslConfig cfg;
  ad::Tape t1, t2;
  const double u = unlabelled_loss(t1, m, x, cfg, eps).item();
  const double l = labelled_loss(t2, m, x, one_hot(std::vector<int>(4, 1), 1, 3), cfg, eps).item();
  CHECK(u == doctest::Approx(l).epsilon(1e-9));
}

TEST_CASE("literal sum equals the sum of per-class labelled losses") {
  auto m = fixtures::tiny_semisup(4, 1, 11);
  const Matrix x = fixtures::normal(5, 3, 12);
  const Matrix eps = fixtures::normal(5, 2, 13);
  SslConfig cfg;
  cfg.mode = UnlabelledMode::kLiteralSum;
  ad::Tape t;
  const double literal = unlabelled_loss(t, m, x, cfg, eps).item();
  double total = 0.0;
  for (int c = 0; c < 4; ++c) {
    ad::Tape tc;
    total += labelled_loss(tc, m, x, one_hot(std::vector<int>(5, c), 1, 4), cfg, eps).item();
  }
  CHECK(std::abs(literal - total) < 1e-12);
}

TEST_CASE("enumeration limits") {
  auto multi = fixtures::tiny_semisup(2, 3, 14);
  ad::Tape t;
  CHECK_THROWS(unlabelled_loss(t, multi, fixtures::normal(2, 3, 1), SslConfig{}, fixtures::normal(2, 2, 2)));
  auto wide = fixtures::tiny_semisup(kMaxEnumeratedClasses + 1, 1, 14);
  ad::Tape t2;
  CHECK_THROWS_WITH(unlabelled_loss(t2, wide, fixtures::normal(2, 3, 1), SslConfig{}, fixtures::normal(2, 2, 2)),
                    doctest::Contains("Gumbel"));
}

TEST_CASE("combined objective gradient flow") {
  auto m = fixtures::tiny_semisup(3, 1, 15);
  LabelledBatch lb{fixtures::normal(4, 3, 16), labels_for(4, 3, 1, 17), fixtures::normal(4, 2, 18)};
  UnlabelledBatch empty;
  SslConfig cfg;
  cfg.alpha = 0.0;
  {
    ad::Tape t;
    m.params.zero_grad();
    t.backward(combined_objective(t, m, lb, empty, cfg));
    CHECK(classifier_grad_norm(m) == 0.0);
  }
  {
    ad::Tape t1, t2;
    CHECK(combined_objective(t1, m, lb, empty, cfg).item() ==
          labelled_loss(t2, m, lb.x, lb.y, cfg, lb.eps).item());
  }
  cfg.alpha = 1.0;
  {
    ad::Tape t;
    m.params.zero_grad();
    t.backward(combined_objective(t, m, lb, empty, cfg));
    CHECK(classifier_grad_norm(m) > 0.0);
  }
  cfg.alpha = 0.0;
  UnlabelledBatch ub{fixtures::normal(4, 3, 19), fixtures::normal(4, 2, 20), {}};
  {
    ad::Tape t;
    m.params.zero_grad();
    t.backward(combined_objective(t, m, lb, ub, cfg));
    CHECK(classifier_grad_norm(m) > 0.0);
  }
  ad::Tape t;
  CHECK_THROWS(combined_objective(t, m, LabelledBatch{}, UnlabelledBatch{}, cfg));
}

TEST_CASE("gumbel softmax draws") {
  const double h[] = {0.3, -1.0, 2.0};
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    const auto s = gumbel_softmax_sample(h, 0.7, rng);
    double total = 0.0;
    for (double v : s) total += v;
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  CHECK(gumbel_softmax_sample(h, 0.5, 7) == gumbel_softmax_sample(h, 0.5, 7));
  CHECK_THROWS(gumbel_softmax_sample(h, 0.0, 7));

  const double flat[] = {0.0, 0.0};
  for (double tau : {0.1, 1.0, 5.0}) {
    Rng r(22);
    int first = 0;
    for (int i = 0; i < 50000; ++i) {
      const auto s = gumbel_softmax_sample(flat, tau, r);
      first += s[0] > s[1];
    }
    CHECK(std::abs(first / 50000.0 - 0.5) < 0.02);
  }

  Rng cold(23);
  int sharp = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto s = gumbel_softmax_sample(h, 0.01, cold);
    sharp += *std::max_element(s.begin(), s.end()) > 0.99;
  }
  CHECK(sharp >= 0.95 * 2000);
}

TEST_CASE("relaxed single-output estimate approaches the enumerated loss") {
  auto m = fixtures::tiny_semisup(3, 1, 24);
  fixtures::jitter(m.params, 25, 0.2);
  const Matrix x = fixtures::normal(3, 3, 26);
  const Matrix eps = fixtures::normal(3, 2, 27);
  SslConfig cfg;
  cfg.tau = 0.01;
  ad::Tape te;
  const double exact = unlabelled_loss(te, m, x, cfg, eps).item();
  Rng rng(28);
  double total = 0.0;
  const int draws = 4000;
  for (int i = 0; i < draws; ++i) {
    ad::Tape t;
    total += multilabel_unlabelled_loss(t, m, x, cfg, eps, rng.gumbel_matrix(3, 3)).item();
  }
  CHECK(std::abs(total / draws - exact) < 0.05);

  const Matrix g = fixtures::normal(3, 3, 29);
  ad::Tape a, b;
  CHECK(multilabel_unlabelled_loss(a, m, x, cfg, eps, g).item() == multilabel_unlabelled_loss(b, m, x, cfg, eps, g).item());
  ad::Tape c;
  CHECK_THROWS(multilabel_unlabelled_loss(c, m, x, cfg, eps, Matrix(3, 2)));
}

TEST_CASE("classifier predictions") {
  auto m = fixtures::tiny_semisup(3, 2, 30);
  const auto pred = m.classifier.predict(m.params, fixtures::normal(5, 3, 31));
  CHECK(pred.size() == 10);
  for (int p : pred) CHECK((p >= 0 && p < 3));
}

TEST_CASE("balanced batch iterator") {
  Rng rng(32);
  const std::size_t n = 300, outputs = 5;
  std::vector<int> labels(n * outputs);
  for (int& v : labels) v = rng.uniform() < 0.2 ? 1 : 0;
  BalancedBatchIterator it(labels, outputs, 100, 33);
  BalancedBatchIterator again(labels, outputs, 100, 33);
  for (std::size_t t = 0; t < 12; ++t) {
    CHECK(it.active_output() == t % outputs);
    const auto batch = it.next();
    CHECK(batch == again.next());
    REQUIRE(batch.size() == 100);
    int pos = 0;
    for (auto r : batch) pos += labels[r * outputs + t % outputs];
    CHECK(pos == 50);
  }
  CHECK_THROWS(BalancedBatchIterator(labels, outputs, 99, 1));
  std::vector<int> no_pos(20, 0);
  CHECK_THROWS_WITH(BalancedBatchIterator(no_pos, 2, 4, 1), doctest::Contains("output 0"));
}
