#pragma once

#include <map>
#include <string>

#include "json.hpp"
#include "slidemask/tensor.hpp"

namespace slidemask {

/// Named float32 tensors plus a metadata document.
///
/// File layout (little endian): "SMCK", u32 version, u32 metadata length,
/// metadata JSON, u32 tensor count, then per tensor u32 name length, name,
/// u32 rank, i32 dims[rank], f32 values.
struct Checkpoint {
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
  std::map<std::string, Tensor> tensors;
};

void write_checkpoint(const Checkpoint& checkpoint, const std::string& path);
/// Throws not_found for a missing file and checkpoint errors for bad content.
Checkpoint read_checkpoint(const std::string& path);

}  // namespace slidemask
