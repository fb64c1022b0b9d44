#pragma once

#include "ucm/codec.hpp"
#include "ucm/curation.hpp"
#include "ucm/diffusion.hpp"
#include "ucm/memory.hpp"
#include "ucm/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ucm {

struct RetrievalConfig {
  int memories = 4;  // M, frames retrieved per generated clip
  FrustumConfig frustum;
};

/// Independent random streams derived from the root seed.
enum class SeedStream { curation, init, training, sampling };

uint64_t stream_seed(uint64_t root, SeedStream stream);
const char* stream_name(SeedStream stream);

struct RunConfig {
  uint64_t seed = 0;
  std::filesystem::path dataset = "data";
  std::filesystem::path output = "out";
  DatasetConfig curation;  // its seed field is replaced by the curation stream
  ModelConfig model;
  CodecConfig codec;
  TrainConfig train;
  SamplerConfig sampler;
  RetrievalConfig retrieval;

  /// Validates every section and the cross-section constraints (image size
  /// against the token grid, latent width against the codec).
  void validate() const;
  /// The curation section with its seed taken from the curation stream.
  DatasetConfig dataset_config() const;
  Intrinsics intrinsics() const;
};

nlohmann::json to_json_doc(const RunConfig& cfg);
/// Throws std::invalid_argument naming the offending dotted key for unknown
/// keys or values of the wrong type.
RunConfig from_json_doc(const nlohmann::json& doc);

/// Applies "a.b.c=value" to `doc`. The key must already exist; the value is
/// parsed as JSON when possible and as a string otherwise, and must keep the
/// kind (number, string, bool, object) of the value it replaces.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Defaults, then the file at `path` if given, then `overrides` in order,
/// then `seed` if given. The result is validated.
RunConfig resolve_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides,
                         const std::optional<uint64_t>& seed = std::nullopt);

}  // namespace ucm
