#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <stdexcept>

#include "csrae/checkpoint.hpp"
#include "doctest.h"

using namespace csrae;

namespace {

ad::ParamStore sample_store() {
  ad::ParamStore s;
  s.add("a.W", Matrix::from_rows({{1.0, -2.5}, {0.1, std::numeric_limits<double>::denorm_min()}}));
  s.add("b", Matrix::from_rows({{3.25, -0.0, 1e300}}));
  return s;
}

}  // namespace

TEST_CASE("encode/decode round trip is bit exact") {
  const ad::ParamStore s = sample_store();
  const auto bytes = encode_checkpoint(s);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "CSRAECK1");
  const auto arrays = decode_checkpoint(bytes);
  REQUIRE(arrays.size() == 2);
  CHECK(arrays[0].name == "a.W");
  CHECK(arrays[0].value == s.get("a.W").value);
  CHECK(arrays[1].value == s.get("b").value);
  CHECK(std::signbit(arrays[1].value(0, 1)));
}

TEST_CASE("file round trip and assignment") {
  const auto path = (std::filesystem::temp_directory_path() / "csrae_ckpt_test.bin").string();
  save_checkpoint(path, sample_store());
  ad::ParamStore target;
  target.add("a.W", Matrix(2, 2));
  target.add("b", Matrix(1, 3));
  load_checkpoint(path, target);
  CHECK(target.get("b").value(0, 0) == 3.25);

  ad::ParamStore wrong_shape;
  wrong_shape.add("a.W", Matrix(2, 3));
  wrong_shape.add("b", Matrix(1, 3));
  CHECK_THROWS(load_checkpoint(path, wrong_shape));

  ad::ParamStore wrong_name;
  wrong_name.add("a.W", Matrix(2, 2));
  wrong_name.add("c", Matrix(1, 3));
  CHECK_THROWS(load_checkpoint(path, wrong_name));
  std::filesystem::remove(path);
  CHECK_THROWS(read_checkpoint(path));
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto bytes = encode_checkpoint(sample_store());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH(decode_checkpoint(bad_magic), doctest::Contains("bad magic"));
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  CHECK_THROWS_WITH(decode_checkpoint(truncated), doctest::Contains("truncated"));
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_WITH(decode_checkpoint(trailing), doctest::Contains("trailing"));
}
