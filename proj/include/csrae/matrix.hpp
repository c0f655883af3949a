#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace csrae {

/// Dense row-major matrix of doubles. Scalars are 1x1, row vectors 1xN.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix scalar(double v) { return Matrix(1, 1, v); }
  static Matrix row(std::span<const double> values);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  /// Copies the given rows, in order, into a new matrix.
  Matrix select_rows(std::span<const std::size_t> indices) const;
  Matrix transpose() const;

  double item() const;
  void fill(double v);

  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace csrae
