#pragma once

#include <string>
#include <utility>
#include <vector>

#include "textpolicy/tensor.hpp"

namespace textpolicy {

// Binary container: "NTCK1", u32 entry count, then per entry u32 name length,
// name bytes, u32 rank, rank u32 dims, row-major f32 payload. All integers and
// floats little-endian.
void write_checkpoint(const std::string& path,
                      const std::vector<std::pair<std::string, const Matrix*>>& entries);
void write_checkpoint(const std::string& path,
                      const std::vector<const Parameter*>& params);

std::vector<std::pair<std::string, Matrix>> read_checkpoint(const std::string& path);

// Fills the listed parameters by name; every parameter must be present with a
// matching shape.
void load_checkpoint(const std::string& path, const std::vector<Parameter*>& params);

}  // namespace textpolicy
