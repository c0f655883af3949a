#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csrae/autodiff.hpp"

namespace csrae::nn {

enum class Activation { kIdentity, kRelu, kSoftplus, kSigmoid, kTanh };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation act);
ad::Value apply(Activation act, ad::Value x);

/// Uniform Glorot initialization on +/- sqrt(6 / (fan_in + fan_out)).
Matrix glorot_init(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);

struct LayerSpec {
  std::size_t units;
  Activation activation;
};

/// Stack of fully connected layers. Weights live in a ParamStore under
/// "<prefix>.<i>.W" (in x out) and "<prefix>.<i>.b" (1 x out).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ad::ParamStore& store, const std::string& prefix, std::size_t input_dim,
      std::vector<LayerSpec> layers, std::uint64_t seed);

  ad::Value forward(ad::Tape& tape, ad::ParamStore& store, ad::Value x) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const;
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<std::string>& parameter_names() const { return names_; }

 private:
  std::size_t input_dim_ = 0;
  std::vector<LayerSpec> layers_;
  std::vector<std::string> names_;  // W0, b0, W1, b1, ...
};

struct AdamState {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

/// One bias-corrected Adam update of every parameter in `store`.
void adam_step(ad::ParamStore& store, AdamState& state);

/// Plain gradient descent: value -= lr * grad.
void sgd_step(ad::ParamStore& store, double learning_rate);

/// Builds a loss on a fresh tape. Must be deterministic (noise frozen by the caller).
using LossFn = std::function<ad::Value(ad::Tape&, ad::ParamStore&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::string worst_parameter;
};

/// Central-difference check of analytic gradients on up to `max_coordinates`
/// randomly chosen coordinates. Relative error is |a - n| / max(|a|, |n|, floor).
/// When `include` is set, only parameters it accepts are perturbed.
GradCheckResult grad_check(const LossFn& loss_fn, ad::ParamStore& store, double eps = 1e-5,
                           std::size_t max_coordinates = 200, std::uint64_t seed = 7,
                           double floor = 1e-2,
                           const std::function<bool(const std::string&)>& include = {});

}  // namespace csrae::nn
