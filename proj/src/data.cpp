#include "csrae/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "csrae/gmm.hpp"
#include "csrae/rng.hpp"

namespace csrae::data {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string path)
      : bytes_(bytes), path_(std::move(path)) {}

  std::uint32_t u32_be() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    need(n);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw std::runtime_error(path_ + ": truncated at byte offset " + std::to_string(pos_));
    }
  }
  const std::vector<std::uint8_t>& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

void check_magic(ByteReader& r, std::uint32_t expected, const std::string& path) {
  const std::uint32_t magic = r.u32_be();
  if (magic != expected) {
    std::ostringstream os;
    os << path << ": bad magic 0x" << std::hex << magic << " at byte offset 0";
    throw std::runtime_error(os.str());
  }
}

void put_u32_be(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(std::string cell, std::size_t line_no) {
  while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
  std::size_t start = cell.find_first_not_of(' ');
  if (start == std::string::npos) start = cell.size();
  const char* b = cell.data() + start;
  const char* e = cell.data() + cell.size();
  double v = 0.0;
  const auto res = std::from_chars(b, e, v);
  if (b == e || res.ec != std::errc() || res.ptr != e) {
    throw std::runtime_error("csv: non-numeric cell '" + cell + "' at row " +
                             std::to_string(line_no));
  }
  return v;
}

}  // namespace

Binarization binarization_from_string(const std::string& s) {
  if (s == "none") return Binarization::kNone;
  if (s == "static") return Binarization::kStatic;
  if (s == "dynamic") return Binarization::kDynamic;
  throw std::invalid_argument("unknown binarization '" + s + "'");
}

std::string to_string(Binarization b) {
  switch (b) {
    case Binarization::kNone: return "none";
    case Binarization::kStatic: return "static";
    case Binarization::kDynamic: return "dynamic";
  }
  return "none";
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset out;
  out.features = features.select_rows(idx);
  out.label_cols = label_cols;
  out.split = split;
  out.binarization = binarization;
  out.labels.reserve(idx.size() * label_cols);
  for (std::size_t r : idx)
    for (std::size_t l = 0; l < label_cols; ++l) out.labels.push_back(label(r, l));
  return out;
}

Dataset gen_two_gaussian_1d(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("gen_two_gaussian_1d: n must be >= 1");
  const gmm::DiagGMM target({0.5, 0.5}, {gmm::DiagGaussian({-3.0}, {1.0}),
                                         gmm::DiagGaussian({3.0}, {1.0})});
  gmm::GmmSamples s = gmm::sample_gmm(target, n, seed);
  Dataset ds;
  ds.features = std::move(s.points);
  ds.label_cols = 1;
  for (std::size_t c : s.components) ds.labels.push_back(static_cast<int>(c));
  return ds;
}

Dataset gen_pinwheel(const PinwheelSpec& spec, std::uint64_t seed) {
  if (spec.clusters == 0 || spec.n % spec.clusters != 0) {
    throw std::invalid_argument("gen_pinwheel: n=" + std::to_string(spec.n) +
                                " is not divisible by clusters=" + std::to_string(spec.clusters));
  }
  const std::size_t per = spec.n / spec.clusters;
  Rng rng(seed);
  Dataset ds;
  ds.features = Matrix(spec.n, 2);
  ds.label_cols = 1;
  ds.labels.resize(spec.n);
  for (std::size_t k = 0; k < spec.clusters; ++k) {
    const double base = 2.0 * std::numbers::pi * static_cast<double>(k) /
                        static_cast<double>(spec.clusters);
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t r = k * per + i;
      const double radial = 1.0 + spec.radial_std * rng.normal();
      const double tangential = spec.tangential_std * rng.normal();
      const double angle = base + spec.rate * radial;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      ds.features(r, 0) = c * radial - s * tangential;
      ds.features(r, 1) = s * radial + c * tangential;
      ds.labels[r] = static_cast<int>(k);
    }
  }
  return ds;
}

Matrix read_idx_images(const std::string& path, std::size_t* rows, std::size_t* cols) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, path);
  check_magic(r, kIdxImages, path);
  const std::size_t n = r.u32_be();
  const std::size_t h = r.u32_be();
  const std::size_t w = r.u32_be();
  const std::uint8_t* px = r.take(n * h * w);
  Matrix m(n, h * w);
  for (std::size_t i = 0; i < n * h * w; ++i) m[i] = static_cast<double>(px[i]) / 255.0;
  if (rows) *rows = h;
  if (cols) *cols = w;
  return m;
}

std::vector<int> read_idx_labels(const std::string& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, path);
  check_magic(r, kIdxLabels, path);
  const std::size_t n = r.u32_be();
  const std::uint8_t* p = r.take(n);
  return std::vector<int>(p, p + n);
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  Dataset ds;
  ds.features = read_idx_images(images_path);
  ds.labels = read_idx_labels(labels_path);
  ds.label_cols = 1;
  if (ds.labels.size() != ds.features.rows()) {
    throw std::runtime_error("idx: " + std::to_string(ds.features.rows()) + " images but " +
                             std::to_string(ds.labels.size()) + " labels");
  }
  return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path, const Dataset& ds,
               std::size_t rows, std::size_t cols) {
  if (rows * cols != ds.dim()) throw std::invalid_argument("write_idx: rows*cols != feature width");
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot write '" + images_path + "'");
  put_u32_be(img, kIdxImages);
  put_u32_be(img, static_cast<std::uint32_t>(ds.size()));
  put_u32_be(img, static_cast<std::uint32_t>(rows));
  put_u32_be(img, static_cast<std::uint32_t>(cols));
  for (double v : ds.features.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("write_idx: pixel outside [0, 1]");
    img.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
  }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot write '" + labels_path + "'");
  put_u32_be(lab, kIdxLabels);
  put_u32_be(lab, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const int y = ds.has_labels() ? ds.label(r) : 0;
    if (y < 0 || y > 255) throw std::invalid_argument("write_idx: label outside [0, 255]");
    lab.put(static_cast<char>(static_cast<std::uint8_t>(y)));
  }
}

Splits split(const Dataset& ds, std::array<std::size_t, 3> counts, std::uint64_t seed) {
  const std::size_t total = counts[0] + counts[1] + counts[2];
  if (total > ds.size()) {
    throw std::invalid_argument("split: requested " + std::to_string(total) + " rows from " +
                                std::to_string(ds.size()));
  }
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  std::span<const std::size_t> all(idx);
  Splits s;
  s.train = ds.subset(all.subspan(0, counts[0]));
  s.val = ds.subset(all.subspan(counts[0], counts[1]));
  s.test = ds.subset(all.subspan(counts[0] + counts[1], counts[2]));
  s.train.split = "train";
  s.val.split = "val";
  s.test.split = "test";
  return s;
}

Matrix binarize(const Matrix& batch, Binarization policy, std::uint64_t epoch, std::uint64_t seed,
                std::uint64_t batch_index) {
  for (double v : batch.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("binarize: value outside [0, 1]");
  }
  Matrix out = batch;
  switch (policy) {
    case Binarization::kNone:
      break;
    case Binarization::kStatic:
      for (double& v : out.values()) v = v >= 0.5 ? 1.0 : 0.0;
      break;
    case Binarization::kDynamic: {
      Rng rng(mix_seed(seed, epoch, batch_index));
      for (double& v : out.values()) v = rng.uniform() < v ? 1.0 : 0.0;
      break;
    }
  }
  return out;
}

Dataset load_csv_labeled(const std::string& path, const std::vector<std::size_t>& label_columns,
                         bool header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (header && line_no == 1) continue;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_line(line);
    if (rows.empty()) {
      width = cells.size();
    } else if (cells.size() != width) {
      throw std::runtime_error("csv: ragged row " + std::to_string(line_no) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(width));
    }
    std::vector<double> vals;
    vals.reserve(cells.size());
    for (const auto& c : cells) vals.push_back(parse_cell(c, line_no));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw std::runtime_error("csv: '" + path + "' has no data rows");
  std::vector<bool> is_label(width, false);
  for (std::size_t c : label_columns) {
    if (c >= width) throw std::invalid_argument("csv: label column " + std::to_string(c) + " out of range");
    is_label[c] = true;
  }
  const std::size_t n_feat = width - label_columns.size();
  Dataset ds;
  ds.features = Matrix(rows.size(), n_feat);
  ds.label_cols = label_columns.size();
  ds.labels.reserve(rows.size() * label_columns.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t f = 0;
    for (std::size_t c = 0; c < width; ++c)
      if (!is_label[c]) ds.features(r, f++) = rows[r][c];
    for (std::size_t c : label_columns) {
      const double v = rows[r][c];
      if (v != std::floor(v) || v < 0.0) {
        throw std::runtime_error("csv: label value " + format_number(v) + " in data row " +
                                 std::to_string(r + 1) + " is not a non-negative integer");
      }
      ds.labels.push_back(static_cast<int>(v));
    }
  }
  return ds;
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_csv(const std::string& path, const std::vector<std::string>& header, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_number(m(r, c));
    out << '\n';
  }
}

}  // namespace csrae::data
