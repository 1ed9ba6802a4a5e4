#pragma once

#include <string>

#include "pgcn/tensor.hpp"

namespace pgcn {

// Binary checkpoint, magic "PGCN1", little-endian:
//   u64 tensor count; per tensor: u64 name length, name bytes, u64 rank,
//   u64 extents[rank], f64 values (row-major).
void save_checkpoint(const std::string& path, const NamedParams& params);
NamedParams load_checkpoint(const std::string& path);

// Copies loaded values into the model's parameters; throws with a name diff
// when the two sets do not match exactly.
void assign_parameters(NamedParams& target, const NamedParams& loaded);

}  // namespace pgcn
