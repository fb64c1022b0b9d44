#pragma once

#include "ucm/image.hpp"
#include "ucm/pe_warp.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace ucm {

struct CodecConfig {
  int spatial_stride = 8;   // s
  int temporal_stride = 1;  // r
  int channels = 192;       // D, must equal r·s²·3
  uint64_t seed = 0x3c6ef372fe94f82bull;

  int input_dim() const { return temporal_stride * spatial_stride * spatial_stride * 3; }
  void validate() const;
};

/// Fixed orthonormal patchify codec. Each latent token gathers an s×s patch
/// from the r frames of its latent group (the first group holds frame 0
/// alone, replicated into all r slots) and applies a seeded orthonormal
/// projection. Decoding applies the transpose; the first group averages its
/// slots.
class Codec {
 public:
  explicit Codec(const CodecConfig& cfg = {});

  const CodecConfig& config() const { return cfg_; }
  /// input_dim × D with orthonormal columns.
  const Eigen::MatrixXf& projection() const { return projection_; }

  /// Throws std::invalid_argument unless every frame has the same size, s
  /// divides it, and T = 1 + k·r.
  LatentClip encode(const std::vector<Image>& frames) const;
  LatentClip encode_frame(const Image& frame) const;
  std::vector<Image> decode(const LatentClip& latent) const;

  /// Number of video frames a latent clip decodes to.
  int video_frames(int latent_frames) const { return 1 + (latent_frames - 1) * cfg_.temporal_stride; }

 private:
  CodecConfig cfg_;
  Eigen::MatrixXf projection_;
};

}  // namespace ucm
