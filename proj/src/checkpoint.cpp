#include "csrae/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace csrae {
namespace {

constexpr char kMagic[8] = {'C', 'S', 'R', 'A', 'E', 'C', 'K', '1'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw std::runtime_error("checkpoint truncated at byte offset " + std::to_string(pos_));
    }
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ad::ParamStore& store) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  std::uint64_t total = 0;
  for (const auto& p : store) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
    total += p.value.size();
  }
  put_le<std::uint64_t>(out, total);
  for (const auto& p : store)
    for (double v : p.value.values()) put_le<double>(out, v);
  return out;
}

std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw std::runtime_error("checkpoint: bad magic at byte offset 0");
  }
  const auto count = in.get<std::uint32_t>();
  std::vector<NamedArray> arrays;
  std::uint64_t expected = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint32_t>();
    std::string name = in.get_string(len);
    const auto rows = in.get<std::uint32_t>();
    const auto cols = in.get<std::uint32_t>();
    arrays.push_back({std::move(name), Matrix(rows, cols)});
    expected += static_cast<std::uint64_t>(rows) * cols;
  }
  const auto total = in.get<std::uint64_t>();
  if (total != expected) {
    throw std::runtime_error("checkpoint: header declares " + std::to_string(total) +
                             " values but shapes need " + std::to_string(expected));
  }
  for (auto& a : arrays)
    for (auto& v : a.value.values()) v = in.get<double>();
  if (in.remaining() != 0) {
    throw std::runtime_error("checkpoint: trailing bytes at offset " + std::to_string(in.offset()));
  }
  return arrays;
}

void save_checkpoint(const std::string& path, const ad::ParamStore& store) {
  const auto bytes = encode_checkpoint(store);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

std::vector<NamedArray> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void assign_checkpoint(const std::vector<NamedArray>& arrays, ad::ParamStore& store) {
  if (arrays.size() != store.size()) {
    throw std::invalid_argument("checkpoint has " + std::to_string(arrays.size()) +
                                " arrays, model expects " + std::to_string(store.size()));
  }
  for (const auto& a : arrays) {
    if (!store.contains(a.name)) {
      throw std::invalid_argument("checkpoint array '" + a.name + "' not present in model");
    }
    auto& p = store.get(a.name);
    if (!p.value.same_shape(a.value)) {
      throw std::invalid_argument("checkpoint array '" + a.name + "' has shape " +
                                  a.value.shape_string() + ", model expects " +
                                  p.value.shape_string());
    }
  }
  for (const auto& a : arrays) store.get(a.name).value = a.value;
}

void load_checkpoint(const std::string& path, ad::ParamStore& store) {
  assign_checkpoint(read_checkpoint(path), store);
}

}  // namespace csrae
