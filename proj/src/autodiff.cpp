#include "csrae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace csrae::ad {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

std::string shapes(const Matrix& a, const Matrix& b) {
  return a.shape_string() + " and " + b.shape_string();
}

std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* op, const Matrix& ma,
                          const Matrix& mb) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shapes(ma, mb));
}

/// Sums `g` (R x C) down to the shape (rows x cols) of a broadcast operand.
Matrix reduce_to(const Matrix& g, std::size_t rows, std::size_t cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const std::size_t rr = rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < g.cols(); ++c) out(rr, cols == 1 ? 0 : c) += g(r, c);
  }
  return out;
}

template <class Fwd, class DA, class DB>
Value binary(Value a, Value b, const char* name, Fwd fwd, DA dfa, DB dfb) {
  const Matrix& x = a.data();
  const Matrix& y = b.data();
  const std::size_t rows = broadcast_dim(x.rows(), y.rows(), name, x, y);
  const std::size_t cols = broadcast_dim(x.cols(), y.cols(), name, x, y);
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t xr = x.rows() == 1 ? 0 : r;
    const std::size_t yr = y.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) {
      out(r, c) = fwd(x(xr, x.cols() == 1 ? 0 : c), y(yr, y.cols() == 1 ? 0 : c));
    }
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, dfa, dfb](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(ib);
    const bool need_a = t.requires_grad(ia);
    const bool need_b = t.requires_grad(ib);
    Matrix ga(g.rows(), g.cols());
    Matrix gb(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const std::size_t xr = x.rows() == 1 ? 0 : r;
      const std::size_t yr = y.rows() == 1 ? 0 : r;
      for (std::size_t c = 0; c < g.cols(); ++c) {
        const double xv = x(xr, x.cols() == 1 ? 0 : c);
        const double yv = y(yr, y.cols() == 1 ? 0 : c);
        if (need_a) ga(r, c) = g(r, c) * dfa(xv, yv);
        if (need_b) gb(r, c) = g(r, c) * dfb(xv, yv);
      }
    }
    if (need_a) t.accumulate(ia, reduce_to(ga, x.rows(), x.cols()));
    if (need_b) t.accumulate(ib, reduce_to(gb, y.rows(), y.cols()));
  });
}

/// Elementwise op whose derivative is expressed through input x and output y.
template <class Fwd, class Deriv>
Value unary(Value a, Fwd fwd, Deriv deriv) {
  Matrix out(a.rows(), a.cols());
  const auto& x = a.data().values();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const std::size_t ia = a.id();
  Tape& tape = a.tape();
  const std::size_t io = tape.size();
  return tape.record(std::move(out), {a}, [ia, io, deriv](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(io);
    Matrix gx(x.rows(), x.cols());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * deriv(x[i], y[i]);
    t.accumulate(ia, gx);
  });
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore

Parameter& ParamStore::add(const std::string& name, Matrix value) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  Matrix grad(value.rows(), value.cols());
  params_.push_back(Parameter{name, std::move(value), std::move(grad)});
  return params_.back();
}

Parameter& ParamStore::get(const std::string& name) { return params_.at(index_of(name)); }

const Parameter& ParamStore::get(const std::string& name) const {
  return params_.at(index_of(name));
}

std::size_t ParamStore::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad = Matrix(p.value.rows(), p.value.cols());
}

// ---------------------------------------------------------------------------
// Value / Tape

const Matrix& Value::data() const { return tape_->value(id_); }
const Matrix& Value::grad() const { return tape_->grad(id_); }

Value Tape::constant(Matrix m) {
  nodes_.push_back(Node{std::move(m), {}, nullptr, nullptr, false});
  return {this, nodes_.size() - 1};
}

Value Tape::variable(Matrix m) {
  nodes_.push_back(Node{std::move(m), {}, nullptr, nullptr, true});
  return {this, nodes_.size() - 1};
}

Value Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, nullptr, &p, true});
  return {this, nodes_.size() - 1};
}

Value Tape::record(Matrix value, std::vector<Value> parents, BackwardFn backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (&p.tape() != this) throw std::invalid_argument("Tape: operands belong to another tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : nullptr, nullptr, needs});
  return {this, nodes_.size() - 1};
}

const Matrix& Tape::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  // Unreached nodes have an implicit zero gradient.
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  if (!g.same_shape(n.value)) {
    throw std::logic_error("Tape::accumulate: gradient shape " + g.shape_string() +
                           " does not match value shape " + n.value.shape_string());
  }
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::backward(Value root) {
  if (swept_) throw std::logic_error("Tape::backward: tape already swept; build a new tape");
  if (&root.tape() != this) throw std::invalid_argument("Tape::backward: root from another tape");
  if (root.data().size() != 1) {
    throw std::invalid_argument("Tape::backward: root must be scalar, got " +
                                root.data().shape_string());
  }
  swept_ = true;
  if (!nodes_[root.id()].requires_grad) return;
  nodes_[root.id()].grad = Matrix::scalar(1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) {
      Matrix& pg = n.param->grad;
      if (pg.empty()) pg = Matrix(n.value.rows(), n.value.cols());
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

Value add(Value a, Value b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Value sub(Value a, Value b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Value mul(Value a, Value b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Value div(Value a, Value b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Value neg(Value a) { return scale(a, -1.0); }

Value scale(Value a, double c) {
  return unary(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Value add_scalar(Value a, double c) {
  return unary(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Value matmul(Value a, Value b) {
  const Matrix& x = a.data();
  const Matrix& y = b.data();
  if (x.cols() != y.rows()) throw std::invalid_argument("matmul: incompatible shapes " + shapes(x, y));
  const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x(i, p);
      if (xv == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out(i, j) += xv * y(p, j);
    }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(ib);
    const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
    if (t.requires_grad(ia)) {
      Matrix gx(n, k);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += g(i, j) * y(p, j);
          gx(i, p) = s;
        }
      t.accumulate(ia, gx);
    }
    if (t.requires_grad(ib)) {
      Matrix gy(k, m);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x(i, p);
          if (xv == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gy(p, j) += xv * g(i, j);
        }
      t.accumulate(ib, gy);
    }
  });
}

Value exp(Value a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Value log(Value a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Value square(Value a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Value sqrt(Value a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Value relu(Value a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value softplus(Value a) {
  return unary(
      a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Value sigmoid(Value a) {
  return unary(
      a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Value tanh(Value a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Value clamp(Value a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Value sum(Value a) {
  double s = 0.0;
  for (double v : a.data().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Matrix::scalar(s), {a}, [ia](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    t.accumulate(ia, Matrix(x.rows(), x.cols(), g.item()));
  });
}

Value mean(Value a) {
  const double n = static_cast<double>(a.data().size());
  if (n == 0) throw std::invalid_argument("mean: empty input");
  return scale(sum(a), 1.0 / n);
}

Value sum_rows(Value a) {
  const Matrix& x = a.data();
  Matrix out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, 0) += x(r, c);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    Matrix gx(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) gx(r, c) = g(r, 0);
    t.accumulate(ia, gx);
  });
}

Value sum_cols(Value a) {
  const Matrix& x = a.data();
  Matrix out(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(0, c) += x(r, c);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    Matrix gx(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) gx(r, c) = g(0, c);
    t.accumulate(ia, gx);
  });
}

Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw std::invalid_argument("concat_cols: row mismatch " +
                                  shapes(parts.front().data(), p.data()));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Matrix& x = p.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) out(r, offset + c) = x(r, c);
    offset += x.cols();
    ids.push_back(p.id());
  }
  return parts.front().tape().record(std::move(out), parts, [ids](Tape& t, const Matrix& g) {
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      const Matrix& x = t.value(id);
      if (t.requires_grad(id)) {
        Matrix gx(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t c = 0; c < x.cols(); ++c) gx(r, c) = g(r, offset + c);
        t.accumulate(id, gx);
      }
      offset += x.cols();
    }
  });
}

Value slice_cols(Value a, std::size_t begin, std::size_t count) {
  const Matrix& x = a.data();
  if (begin + count > x.cols()) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") exceeds " + x.shape_string());
  }
  Matrix out(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, begin + c);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, begin, count](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    Matrix gx(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) gx(r, begin + c) = g(r, c);
    t.accumulate(ia, gx);
  });
}

Value logsumexp(Value a) {
  const auto& x = a.data().values();
  if (x.empty()) throw std::invalid_argument("logsumexp: empty input");
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  const double lse = std::isfinite(m) ? m + std::log(s) : m;
  const std::size_t ia = a.id();
  return a.tape().record(Matrix::scalar(lse), {a}, [ia, lse](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    Matrix gx(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = g.item() * std::exp(x[i] - lse);
    t.accumulate(ia, gx);
  });
}

Value logsumexp_rows(Value a) {
  const Matrix& x = a.data();
  if (x.cols() == 0) throw std::invalid_argument("logsumexp_rows: no columns");
  Matrix out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row_span(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    out(r, 0) = std::isfinite(m) ? m + std::log(s) : m;
  }
  const std::size_t ia = a.id();
  Tape& tape = a.tape();
  const std::size_t io = tape.size();
  return tape.record(std::move(out), {a}, [ia, io](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    const Matrix& lse = t.value(io);
    Matrix gx(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c)
        gx(r, c) = g(r, 0) * std::exp(x(r, c) - lse(r, 0));
    t.accumulate(ia, gx);
  });
}

Value softmax_rows(Value a) {
  const Matrix& x = a.data();
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row_span(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += (out(r, c) = std::exp(row[c] - m));
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= s;
  }
  const std::size_t ia = a.id();
  Tape& tape = a.tape();
  const std::size_t io = tape.size();
  return tape.record(std::move(out), {a}, [ia, io](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(io);
    Matrix gx(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) = y(r, c) * (g(r, c) - dot);
    }
    t.accumulate(ia, gx);
  });
}

Value log_softmax_rows(Value a) { return sub(a, logsumexp_rows(a)); }

Value pairwise_log_overlap(Value mean_a, Value var_a, Value mean_b, Value var_b) {
  const Matrix& ma = mean_a.data();
  const Matrix& va = var_a.data();
  const Matrix& mb = mean_b.data();
  const Matrix& vb = var_b.data();
  if (!ma.same_shape(va) || !mb.same_shape(vb) || ma.cols() != mb.cols()) {
    throw std::invalid_argument("pairwise_log_overlap: incompatible shapes " + shapes(ma, va) +
                                " / " + shapes(mb, vb));
  }
  const std::size_t rows = ma.rows(), k = mb.rows(), dim = ma.cols();
  Matrix out(rows, k);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double s = va(i, d) + vb(j, d);
        const double diff = ma(i, d) - mb(j, d);
        acc += -0.5 * (kLog2Pi + std::log(s)) - diff * diff / (2.0 * s);
      }
      out(i, j) = acc;
    }
  const std::size_t ima = mean_a.id(), iva = var_a.id(), imb = mean_b.id(), ivb = var_b.id();
  return mean_a.tape().record(
      std::move(out), {mean_a, var_a, mean_b, var_b},
      [ima, iva, imb, ivb](Tape& t, const Matrix& g) {
        const Matrix& ma = t.value(ima);
        const Matrix& va = t.value(iva);
        const Matrix& mb = t.value(imb);
        const Matrix& vb = t.value(ivb);
        const std::size_t rows = ma.rows(), k = mb.rows(), dim = ma.cols();
        Matrix gma(rows, dim), gva(rows, dim), gmb(k, dim), gvb(k, dim);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const double gij = g(i, j);
            if (gij == 0.0) continue;
            for (std::size_t d = 0; d < dim; ++d) {
              const double s = va(i, d) + vb(j, d);
              const double diff = ma(i, d) - mb(j, d);
              const double dmean = -diff / s;
              const double dvar = -0.5 / s + diff * diff / (2.0 * s * s);
              gma(i, d) += gij * dmean;
              gmb(j, d) -= gij * dmean;
              gva(i, d) += gij * dvar;
              gvb(j, d) += gij * dvar;
            }
          }
        // Shared inputs (e.g. self-overlap) accumulate both contributions.
        t.accumulate(ima, gma);
        t.accumulate(iva, gva);
        t.accumulate(imb, gmb);
        t.accumulate(ivb, gvb);
      });
}

Value detach(Value a) { return a.tape().constant(a.data()); }

}  // namespace csrae::ad
