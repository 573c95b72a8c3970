#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "svae/config_json.hpp"
#include "svae/training.hpp"

namespace svae {

/// File layout: "SVAECKPT", u32 version, u64 manifest length, manifest JSON,
/// float64 blobs in manifest order, CRC-32 of all preceding bytes. Integers
/// and floats are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  TrainState state;
  /// Caller-defined metadata stored alongside (e.g. the data source).
  Json extra;
};

std::vector<std::uint8_t> serialize_checkpoint(const TrainConfig& config, const TrainState& state,
                                               const Json& extra = Json::object());
/// Throws CheckpointError on bad magic, version mismatch, truncation,
/// checksum failure or inconsistent contents.
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const TrainState& state,
                     const Json& extra = Json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace svae
