#include "csrae/matrix.hpp"

#include <algorithm>
#include <stdexcept>

namespace csrae {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("Matrix: data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string());
  }
}

Matrix Matrix::row(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("Matrix::from_rows: ragged rows");
    for (double v : row) m.data_[i++] = v;
  }
  return m;
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw std::out_of_range("Matrix::select_rows: index out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * cols_), cols_,
                out.data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
  }
  return out;
}

Matrix Matrix::transpose() const {
  Matrix out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

double Matrix::item() const {
  if (data_.size() != 1) throw std::invalid_argument("Matrix::item on shape " + shape_string());
  return data_[0];
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

}  // namespace csrae
