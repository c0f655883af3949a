#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csrae/autodiff.hpp"
#include "csrae/models.hpp"
#include "csrae/nn.hpp"
#include "csrae/rng.hpp"

namespace csrae::semisup {

enum class UnlabelledMode { kQWeighted, kLiteralSum };

UnlabelledMode unlabelled_mode_from_string(const std::string& s);

/// Largest class count handled by exact enumeration in unlabelled_loss.
inline constexpr std::size_t kMaxEnumeratedClasses = 64;

struct SslConfig {
  double lambda = 1.0;  // CS weight on z
  double beta = 1.0;    // KL weight on y
  double alpha = 1.0;   // classification weight
  double tau = 0.5;     // Gumbel-Softmax temperature
  std::vector<double> class_prior;  // per-output class prior; empty means uniform
  UnlabelledMode mode = UnlabelledMode::kQWeighted;

  /// Throws std::invalid_argument on negative or non-finite weights, tau <= 0 or a
  /// prior that is not a distribution over `classes`.
  void validate(std::size_t classes) const;
};

/// Classifier q(y|x): one block of `classes` logits per output.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(ad::ParamStore& store, const std::string& prefix, std::size_t input_dim,
                 std::vector<nn::LayerSpec> hidden, std::size_t classes, std::size_t outputs,
                 std::uint64_t seed);

  /// B x (outputs * classes) logits.
  ad::Value logits(ad::Tape& tape, ad::ParamStore& store, ad::Value x) const;
  /// Argmax class per output, row-major n x outputs.
  std::vector<int> predict(ad::ParamStore& store, const Matrix& x) const;

  std::size_t classes() const { return classes_; }
  std::size_t outputs() const { return outputs_; }

 private:
  nn::Mlp net_;
  std::size_t classes_ = 0;
  std::size_t outputs_ = 0;
};

struct SemiSupSpec {
  std::size_t data_dim = 2;
  std::size_t latent_dim = 2;
  std::size_t classes = 2;
  std::size_t outputs = 1;
  /// Width of the linear label embedding h_y; 0 feeds the one-hot code directly.
  std::size_t embedding_dim = 0;
  std::vector<nn::LayerSpec> encoder_hidden;
  std::vector<nn::LayerSpec> decoder_hidden;
  std::vector<nn::LayerSpec> classifier_hidden;
  models::Likelihood likelihood = models::Likelihood::kGaussian;
  models::PriorSpec prior;
  std::uint64_t seed = 0;
};

/// Encoder q(z|x), classifier q(y|x) and decoder p(x|z, y) over one parameter store.
struct SemiSupModel {
  ad::ParamStore params;
  models::MlpEncoder encoder;
  models::MlpDecoder decoder;
  models::Prior prior;
  ClassifierHead classifier;
  nn::Mlp embedding;  // empty when the one-hot code is used directly
  std::size_t embedding_dim = 0;

  std::size_t classes() const { return classifier.classes(); }
  std::size_t outputs() const { return classifier.outputs(); }
  std::size_t code_width() const { return classes() * outputs(); }
};

SemiSupModel build_semisup(const SemiSupSpec& spec, const Matrix* training_features = nullptr);

/// Row-major n x outputs integer labels to n x (outputs * classes) one-hot blocks.
Matrix one_hot(std::span<const int> labels, std::size_t outputs, std::size_t classes);

/// Throws if any block of `y` is not a one-hot row.
void validate_one_hot(const Matrix& y, std::size_t outputs, std::size_t classes);

/// sum_k p_k log(p_k / prior_k).
double categorical_kl(std::span<const double> p, std::span<const double> prior);

/// Per-row KL(Cat(softmax(logits)) || Cat(prior)) summed over outputs (B x 1).
ad::Value categorical_kl_rows(ad::Value logits, std::span<const double> prior,
                              std::size_t outputs);

/// Row-wise softmax((logits + gumbel) / tau) per output block.
ad::Value gumbel_softmax(ad::Value logits, ad::Value gumbel, double tau, std::size_t outputs);

/// One relaxed one-hot draw for a single logit vector.
std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau, Rng& rng);
std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau,
                                          std::uint64_t seed);

/// Mean labelled loss: -E_q[log p(x|z,y)] + lambda CS(q(z|x) || p(z)) + beta KL(q(y|x) || p(y)).
/// The KL term enters with a detached classifier output, so the classifier is
/// only trained through unlabelled data and the classification term.
ad::Value labelled_loss(ad::Tape& tape, SemiSupModel& model, const Matrix& x, const Matrix& y,
                        const SslConfig& cfg, const Matrix& eps);

/// Mean unlabelled loss by exact enumeration of the classes (single output only).
ad::Value unlabelled_loss(ad::Tape& tape, SemiSupModel& model, const Matrix& x,
                          const SslConfig& cfg, const Matrix& eps);

/// Single relaxed-sample estimate of the weighted unlabelled loss. `gumbel` is
/// B x (outputs * classes) standard Gumbel noise.
ad::Value multilabel_unlabelled_loss(ad::Tape& tape, SemiSupModel& model, const Matrix& x,
                                     const SslConfig& cfg, const Matrix& eps,
                                     const Matrix& gumbel);

/// Mean of -log q(y|x) over rows, summed over outputs.
ad::Value classification_loss(ad::Tape& tape, SemiSupModel& model, const Matrix& x,
                              const Matrix& y);

struct LabelledBatch {
  Matrix x;
  Matrix y;    // one-hot blocks
  Matrix eps;  // B x D
};

struct UnlabelledBatch {
  Matrix x;
  Matrix eps;     // B x D
  Matrix gumbel;  // used only when the model has more than one output
};

/// Mean labelled loss + mean unlabelled loss + alpha * mean classification loss.
/// Either batch may be empty (zero rows), not both.
ad::Value combined_objective(ad::Tape& tape, SemiSupModel& model, const LabelledBatch& labelled,
                             const UnlabelledBatch& unlabelled, const SslConfig& cfg);

/// Batches that are half positive, half negative for one binary output at a
/// time, cycling through the outputs round-robin.
class BalancedBatchIterator {
 public:
  /// `labels` is row-major n x outputs with values in {0, 1}.
  BalancedBatchIterator(std::vector<int> labels, std::size_t outputs, std::size_t batch_size,
                        std::uint64_t seed);

  /// Row indices of the next batch.
  std::vector<std::size_t> next();
  /// Output the next batch will balance.
  std::size_t active_output() const { return step_ % outputs_; }

 private:
  struct Pool {
    std::vector<std::size_t> rows;
    std::size_t cursor = 0;
  };
  std::size_t draw(Pool& pool);

  std::size_t outputs_;
  std::size_t batch_size_;
  std::size_t step_ = 0;
  std::vector<Pool> positives_;
  std::vector<Pool> negatives_;
  Rng rng_;
};

}  // namespace csrae::semisup
