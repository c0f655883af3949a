#include "csrae/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "csrae/rng.hpp"

namespace csrae::nn {

Activation activation_from_string(const std::string& name) {
  if (name == "identity" || name == "linear") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "softplus") return Activation::kSoftplus;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSoftplus: return "softplus";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
  }
  return "identity";
}

ad::Value apply(Activation act, ad::Value x) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return ad::relu(x);
    case Activation::kSoftplus: return ad::softplus(x);
    case Activation::kSigmoid: return ad::sigmoid(x);
    case Activation::kTanh: return ad::tanh(x);
  }
  return x;
}

Matrix glorot_init(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  Matrix w(fan_in, fan_out);
  for (auto& v : w.values()) v = rng.uniform(-bound, bound);
  return w;
}

Mlp::Mlp(ad::ParamStore& store, const std::string& prefix, std::size_t input_dim,
         std::vector<LayerSpec> layers, std::uint64_t seed)
    : input_dim_(input_dim), layers_(std::move(layers)) {
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::size_t out = layers_[i].units;
    if (in == 0 || out == 0) throw std::invalid_argument("Mlp '" + prefix + "': zero-width layer");
    const std::string w = prefix + "." + std::to_string(i) + ".W";
    const std::string b = prefix + "." + std::to_string(i) + ".b";
    store.add(w, glorot_init(in, out, mix_seed(seed, i)));
    store.add(b, Matrix(1, out));
    names_.push_back(w);
    names_.push_back(b);
    in = out;
  }
}

std::size_t Mlp::output_dim() const {
  return layers_.empty() ? input_dim_ : layers_.back().units;
}

ad::Value Mlp::forward(ad::Tape& tape, ad::ParamStore& store, ad::Value x) const {
  if (x.cols() != input_dim_) {
    throw std::invalid_argument("Mlp: expected input width " + std::to_string(input_dim_) +
                                ", got " + x.data().shape_string());
  }
  ad::Value h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const ad::Value w = tape.param(store.get(names_[2 * i]));
    const ad::Value b = tape.param(store.get(names_[2 * i + 1]));
    h = apply(layers_[i].activation, ad::add(ad::matmul(h, w), b));
  }
  return h;
}

void adam_step(ad::ParamStore& store, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : store) {
      state.first_moment.emplace_back(p.value.rows(), p.value.cols());
      state.second_moment.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  if (state.first_moment.size() != store.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match parameter store");
  }
  for (const auto& p : store) {
    if (!p.grad.same_shape(p.value)) {
      throw std::invalid_argument("adam_step: missing gradient for parameter '" + p.name + "'");
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  std::size_t i = 0;
  for (auto& p : store) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    ++i;
  }
}

void sgd_step(ad::ParamStore& store, double learning_rate) {
  for (auto& p : store) {
    if (!p.grad.same_shape(p.value)) {
      throw std::invalid_argument("sgd_step: missing gradient for parameter '" + p.name + "'");
    }
    for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] -= learning_rate * p.grad[k];
  }
}

GradCheckResult grad_check(const LossFn& loss_fn, ad::ParamStore& store, double eps,
                           std::size_t max_coordinates, std::uint64_t seed, double floor,
                           const std::function<bool(const std::string&)>& include) {
  store.zero_grad();
  {
    ad::Tape tape;
    const ad::Value loss = loss_fn(tape, store);
    tape.backward(loss);
  }
  struct Coord {
    std::size_t param;
    std::size_t index;
  };
  std::vector<Coord> coords;
  for (std::size_t p = 0; p < store.size(); ++p) {
    if (include && !include(store.at(p).name)) continue;
    for (std::size_t k = 0; k < store.at(p).value.size(); ++k) coords.push_back({p, k});
  }
  if (coords.size() > max_coordinates) {
    // Partial Fisher-Yates: the first max_coordinates entries form the subsample.
    Rng rng(seed);
    for (std::size_t i = 0; i < max_coordinates; ++i) {
      const std::size_t j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(max_coordinates);
  }
  auto evaluate = [&]() {
    ad::Tape tape;
    return loss_fn(tape, store).item();
  };
  GradCheckResult result;
  for (const auto& c : coords) {
    ad::Parameter& p = store.at(c.param);
    const double analytic = p.grad[c.index];
    const double original = p.value[c.index];
    p.value[c.index] = original + eps;
    const double up = evaluate();
    p.value[c.index] = original - eps;
    const double down = evaluate();
    p.value[c.index] = original;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel >= result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_parameter = p.name + "[" + std::to_string(c.index) + "]";
    }
    ++result.coordinates_checked;
  }
  return result;
}

}  // namespace csrae::nn
