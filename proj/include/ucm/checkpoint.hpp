#pragma once

#include "ucm/codec.hpp"
#include "ucm/model.hpp"

#include <cstdint>
#include <filesystem>

namespace ucm {

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  CodecConfig codec;
  long step = 0;
  ParamStore<float> params;
};

/// "UCMC", u32 version, u32 length + JSON config, u32 section count, then
/// per section: u32 name length + name, u32 rank, u32 dims[rank], f32 data.
/// All integers and floats are little-endian.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws std::runtime_error with the path on malformed or truncated files
/// and when the sections do not match the parameter layout of the config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const CodecConfig& c);
void from_json(const nlohmann::json& j, CodecConfig& c);

}  // namespace ucm
