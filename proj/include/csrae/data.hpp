#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csrae/matrix.hpp"

namespace csrae::data {

enum class Binarization { kNone, kStatic, kDynamic };

Binarization binarization_from_string(const std::string& s);
std::string to_string(Binarization b);

struct Dataset {
  Matrix features;           // n x d
  std::vector<int> labels;   // row-major n x label_cols; empty when unlabelled
  std::size_t label_cols = 0;
  std::string split = "all";
  Binarization binarization = Binarization::kNone;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool has_labels() const { return label_cols > 0; }
  /// Label of row r for output l.
  int label(std::size_t r, std::size_t l = 0) const { return labels.at(r * label_cols + l); }
  /// Rows `idx` with their labels.
  Dataset subset(std::span<const std::size_t> idx) const;
};

/// n samples of 0.5 N(-3, 1) + 0.5 N(3, 1); labels hold the generating component.
Dataset gen_two_gaussian_1d(std::size_t n, std::uint64_t seed);

struct PinwheelSpec {
  std::size_t n = 4000;
  std::size_t clusters = 4;
  double radial_std = 0.05;
  double tangential_std = 0.25;
  double rate = 0.25;
};

/// Spiral-warped Gaussian clusters: radius 1 + radial noise, tangential noise,
/// angle 2 pi k / clusters + rate * radius. Rows are grouped by cluster.
Dataset gen_pinwheel(const PinwheelSpec& spec, std::uint64_t seed);

/// IDX image file (magic 0x00000803) to n x (rows*cols) in [0, 1].
Matrix read_idx_images(const std::string& path, std::size_t* rows = nullptr,
                       std::size_t* cols = nullptr);
/// IDX label file (magic 0x00000801).
std::vector<int> read_idx_labels(const std::string& path);
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
/// Pixels are written as round(255 * v).
void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& ds, std::size_t rows, std::size_t cols);

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

inline constexpr std::array<std::size_t, 3> kMnistSplit = {45000, 5000, 10000};

/// Disjoint seeded shuffle into train/val/test of the given sizes.
Splits split(const Dataset& ds, std::array<std::size_t, 3> counts, std::uint64_t seed);

/// STATIC thresholds at 0.5; DYNAMIC draws Bernoulli(pixel) from a seed derived
/// from (seed, epoch, batch_index); NONE copies.
Matrix binarize(const Matrix& batch, Binarization policy, std::uint64_t epoch, std::uint64_t seed,
                std::uint64_t batch_index = 0);

/// Numeric CSV; columns in `label_columns` (0-based) become integer labels.
Dataset load_csv_labeled(const std::string& path, const std::vector<std::size_t>& label_columns,
                         bool header = false);

/// Shortest round-trip decimal representation.
std::string format_number(double v);
void write_csv(const std::string& path, const std::vector<std::string>& header, const Matrix& m);

}  // namespace csrae::data
