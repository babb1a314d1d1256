#pragma once

// Parameter checkpoint container.
//
// Layout (little-endian):
//   magic "FPCKPT01" (8 bytes), u32 format version, u64 entry count, then per
//   entry: u32 name length + name bytes, u32 rank, u64 extent x rank,
//   u64 value count + float64 values.
// Values are stored bit-for-bit, so save -> load is exact.

#include <string>
#include <utility>
#include <vector>

#include "flowpose/parameters.hpp"

namespace flowpose {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using CheckpointEntries = std::vector<std::pair<std::string, Tensor>>;

void save_checkpoint(const std::string& path, const ParameterStore& params);
CheckpointEntries load_checkpoint(const std::string& path);

}  // namespace flowpose
