#pragma once

#include <string>
#include <vector>

#include "fseg/tensor.hpp"

namespace fseg {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Binary checkpoint layout, little-endian throughout:
//   magic "FSEG1"
//   repeated until EOF:
//     u32 name length, name bytes,
//     u32 rank, u32 extent per axis,
//     f32 values in row-major order.
// Values are narrowed to 32-bit floats on write and widened on read.
void save_checkpoint(const std::string& path,
                     const std::vector<NamedParam>& params);
std::vector<NamedParam> load_checkpoint(const std::string& path);

}  // namespace fseg
