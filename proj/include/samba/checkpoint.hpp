#pragma once

#include <string>
#include <utility>
#include <vector>

#include "samba/tensor.hpp"

namespace samba {

// Binary container: magic "SMBA", u32 version, length-prefixed UTF-8 config
// text, u32 tensor count, then per tensor: length-prefixed name, u32 rank,
// u64 dims, u32 dtype code (0 = 32-bit float), raw little-endian data.
// Save/load round-trips parameter values bit-exactly.
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<Parameter*>& params);

CheckpointData read_checkpoint(const std::string& path);

// Assigns by name; missing, extra, or reshaped tensors are errors.
void load_parameters(const std::vector<Parameter*>& params, const CheckpointData& data);

}  // namespace samba
