#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csrae/autodiff.hpp"

namespace csrae {

/// Flat binary parameter file:
///   "CSRAECK1" | u32 count | count x (u32 name_len, name, u32 rows, u32 cols)
///   | u64 value_count | value_count x little-endian float64
struct NamedArray {
  std::string name;
  Matrix value;
};

std::vector<std::uint8_t> encode_checkpoint(const ad::ParamStore& store);
std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const ad::ParamStore& store);
std::vector<NamedArray> read_checkpoint(const std::string& path);

/// Overwrites every parameter of `store` from the file. Names and shapes must
/// match exactly.
void load_checkpoint(const std::string& path, ad::ParamStore& store);
void assign_checkpoint(const std::vector<NamedArray>& arrays, ad::ParamStore& store);

}  // namespace csrae
