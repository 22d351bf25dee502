#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "bayesformer/model.hpp"

namespace bayesformer {

// On-disk layout (all integers little-endian):
//   magic "BAYESFMR" | u32 format version
//   u32 length | config record, UTF-8 "key=value\n" lines
//   u32 tensor count | per tensor: u32 name length, name, u32 rank, u64 dims...
//   payload: row-major float32 values of every tensor in manifest order
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EncoderConfig config;
  EncoderParams params;
};

std::string serialize_config(const EncoderConfig& config);
EncoderConfig deserialize_config(const std::string& record);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
// Validates magic, version and every manifest entry against the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bayesformer
