#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dctps/network.hpp"

namespace dctps {

/// Little-endian "DPSC" image of a network's parameters: version u16, weight
/// layer count u16, then per weight layer: mode u8, alpha f64, the weight
/// block (sparse: rows u32, cols u32, nnz u32, nnz x (row u32, col u32, value f64);
/// dense: rows u32, cols u32, rows*cols f64), bias count u32, bias f64s.
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Network& net);
/// Overwrites the parameters (and sparse supports) of `net`, whose
/// architecture must match the checkpoint.
void deserialize_checkpoint(std::span<const std::uint8_t> bytes, Network& net);

/// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Network& net);
void load_checkpoint(const std::filesystem::path& path, Network& net);

}  // namespace dctps
