#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "csrae/matrix.hpp"

namespace csrae::ad {

/// A named trainable array with its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Named parameters in insertion order. Element addresses are stable.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Matrix value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  Parameter& at(std::size_t i) { return params_.at(i); }
  const Parameter& at(std::size_t i) const { return params_.at(i); }

  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a tape.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& data() const;
  const Matrix& grad() const;
  std::size_t rows() const { return data().rows(); }
  std::size_t cols() const { return data().cols(); }
  double item() const { return data().item(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order of the graph; backward sweeps it in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value constant(Matrix m);
  Value variable(Matrix m);
  /// Leaf bound to a parameter; backward adds into `p.grad`.
  Value param(Parameter& p);

  Value record(Matrix value, std::vector<Value> parents, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 and sweeps the tape. `root` must be 1x1. A tape can
  /// be swept once.
  void backward(Value root);

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  const Matrix& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  /// Adds `g` into the gradient of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Matrix& g);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool swept_ = false;
};

// Elementwise binary ops broadcast any operand dimension of size 1.
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value div(Value a, Value b);

Value neg(Value a);
Value scale(Value a, double c);
Value add_scalar(Value a, double c);

Value matmul(Value a, Value b);

Value exp(Value a);
Value log(Value a);
Value square(Value a);
Value sqrt(Value a);
Value relu(Value a);
Value softplus(Value a);
Value sigmoid(Value a);
Value tanh(Value a);
/// Values outside [lo, hi] are clamped and receive zero gradient.
Value clamp(Value a, double lo, double hi);

/// Sum of all entries (1x1).
Value sum(Value a);
/// Mean of all entries (1x1).
Value mean(Value a);
/// Row sums (Rx1).
Value sum_rows(Value a);
/// Column sums (1xC).
Value sum_cols(Value a);

Value concat_cols(const std::vector<Value>& parts);
Value slice_cols(Value a, std::size_t begin, std::size_t count);

/// log-sum-exp over all entries (1x1), overflow safe.
Value logsumexp(Value a);
/// Row-wise log-sum-exp (Rx1), overflow safe.
Value logsumexp_rows(Value a);
/// Row-wise softmax, overflow safe.
Value softmax_rows(Value a);
Value log_softmax_rows(Value a);

/// Pairwise log overlaps O[i][j] = sum_d log N(mean_a[i,d] | mean_b[j,d], var_a[i,d] + var_b[j,d]).
/// Shapes: mean_a/var_a are (R x D), mean_b/var_b are (K x D); result is (R x K).
Value pairwise_log_overlap(Value mean_a, Value var_a, Value mean_b, Value var_b);

/// Copies the forward value as a constant; no gradient flows through.
Value detach(Value a);

inline Value operator+(Value a, Value b) { return add(a, b); }
inline Value operator-(Value a, Value b) { return sub(a, b); }
inline Value operator*(Value a, Value b) { return mul(a, b); }
inline Value operator/(Value a, Value b) { return div(a, b); }
inline Value operator-(Value a) { return neg(a); }

}  // namespace csrae::ad
