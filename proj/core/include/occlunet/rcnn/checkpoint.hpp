#pragma once

#include <cstdint>
#include <filesystem>

#include "occlunet/nn/adam.hpp"
#include "occlunet/rcnn/arch.hpp"
#include "occlunet/rcnn/network.hpp"

namespace occlunet::rcnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume training or evaluate a network.
struct Checkpoint {
  ArchSpec arch;
  NetParams<float> params;
  nn::AdamState<float> adam;
  std::int64_t epochs_completed = 0;
};

/// Binary layout: "OCNK", version, arch, parameter blocks, batch-norm running
/// statistics, Adam state, then a SHA-256 of all preceding bytes.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Throws IoError if unreadable and CorruptionError on a bad checksum,
/// truncation or malformed content.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// As above, but throws ConfigError unless the stored architecture equals
/// `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchSpec& expected);

}  // namespace occlunet::rcnn
