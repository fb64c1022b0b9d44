#pragma once

#include "ucm/geometry.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace ucm {

/// Latent token grid: frames × grid_h × grid_w × channels, row-major.
struct LatentClip {
  enum class Kind { noisy, clean };

  int frames = 0;
  int grid_h = 0;
  int grid_w = 0;
  int channels = 0;
  Kind kind = Kind::clean;
  std::vector<float> data;
  std::vector<int> time_index;  // 1-based latent time of each frame

  LatentClip() = default;
  LatentClip(int frames, int grid_h, int grid_w, int channels, Kind kind = Kind::clean);

  int tokens_per_frame() const { return grid_h * grid_w; }
  int token_count() const { return frames * grid_h * grid_w; }

  /// Row-per-token view of all frames.
  Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> tokens();
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> tokens() const;
  /// Single frame as its own clip.
  LatentClip frame(int i) const;
};

/// Pixel-resolution coordinate maps of a source image in a target camera.
struct WarpMaps {
  int width = 0;
  int height = 0;
  std::vector<double> u;
  std::vector<double> v;
  std::vector<uint8_t> valid;

  static WarpMaps identity(int width, int height);
};

WarpMaps compute_warp_maps(const DepthMap& d, const CameraPose& src, const CameraPose& dst,
                           const Intrinsics& K);

/// Sub-patch PE levels. Level l splits every patch into factor[l]² sub-cells;
/// each sub-cell is a "view" and every head reads exactly one view.
struct MultiLevelPEConfig {
  int patch = 8;
  std::vector<int> level_factors{1, 2};
  std::vector<int> head_view;  // view index per head

  int levels() const { return static_cast<int>(level_factors.size()); }
  int view_count() const;
  int view_offset(int level) const;

  /// Two levels: the first half of the heads reads the whole-patch level, the
  /// second half is spread over the 2×2 quadrants of level 1.
  static MultiLevelPEConfig standard(int heads, int patch);
  void validate(int heads) const;
};

/// Coordinates pooled to one level, in latent-grid units (pixel / patch).
struct PooledCoords {
  int grid_w = 0;
  int grid_h = 0;
  int factor = 1;
  std::vector<double> u;  // [token][sub-cell]
  std::vector<double> v;
  std::vector<uint8_t> valid;
};

PooledCoords pool_coords_to_level(const WarpMaps& maps, const MultiLevelPEConfig& cfg, int level);

/// Per-token (τ, u, v) with one (u, v) per view. A token is valid when its
/// whole-patch cell saw at least one valid pixel; invalid sub-cells of a valid
/// token fall back to the whole-patch coordinate.
struct TimeAwarePE {
  int tokens = 0;
  int views = 0;
  std::vector<int> tau;
  std::vector<double> u;  // [token * views + view]
  std::vector<double> v;
  std::vector<uint8_t> valid;

  size_t valid_count() const;
};

TimeAwarePE make_time_aware_pe(const WarpMaps& maps, int tau, const MultiLevelPEConfig& cfg);
/// PE of tokens that sit at their own grid positions.
TimeAwarePE native_pe(int width, int height, int tau, const MultiLevelPEConfig& cfg);

/// One conditional entry: a clean latent frame seen through one PE view.
struct CondEntry {
  int source = 0;  // 0 = reference image, j >= 1 = memory frame j
  int frame = 1;   // assigned target latent frame, 1-based
  TimeAwarePE pe;
};

/// Reference entries first (one per target frame), then memories in order.
struct CondTokenSet {
  int target_frames = 0;
  int memory_count = 0;
  int tokens_per_frame = 0;
  std::vector<CondEntry> entries;

  size_t token_count() const { return entries.size() * static_cast<size_t>(tokens_per_frame); }
  std::vector<int> assignments() const;
};

/// `ref_warps[i]` maps the reference into target frame i+1; `memory_warps[j]`
/// maps memory j into its assigned frame `assignments[j]` (1-based).
CondTokenSet assemble_condition_set(const LatentClip& ref, std::span<const LatentClip> memories,
                                    std::span<const WarpMaps> ref_warps,
                                    std::span<const WarpMaps> memory_warps,
                                    std::span<const int> assignments,
                                    const MultiLevelPEConfig& cfg);

/// 3D rotary encoding. Each head's channels split into time / u / v groups
/// (1/4, 3/8, 3/8); pairs rotate by coord · θ^(-2p/d) with θ per axis.
struct RopeConfig {
  int heads = 8;
  int head_dim = 16;
  double theta_time = 10.0;
  double theta_space = 10.0;
  MultiLevelPEConfig levels = MultiLevelPEConfig::standard(8, 8);

  int time_dims() const { return head_dim / 4; }
  int u_dims() const { return head_dim * 3 / 8; }
  int v_dims() const { return head_dim - time_dims() - u_dims(); }
  void validate() const;
};

/// cos/sin per token, head and channel pair.
struct RopeTable {
  int tokens = 0;
  int heads = 0;
  int pairs = 0;
  std::vector<double> cos;
  std::vector<double> sin;
};

RopeTable build_rope_table(const TimeAwarePE& pe, const RopeConfig& cfg);
/// Concatenates tables row-wise (token order preserved).
RopeTable concat_rope_tables(std::span<const RopeTable> tables);

/// Rotates rows (tokens × heads·head_dim) in place; `inverse` applies the
/// transpose rotation, which is the backward pass of the forward rotation.
template <typename Derived>
void rotate_rows(Eigen::MatrixBase<Derived>& rows, const RopeTable& table, bool inverse = false) {
  using Scalar = typename Derived::Scalar;
  const int head_dim = 2 * table.pairs;
  for (int t = 0; t < table.tokens; ++t) {
    for (int h = 0; h < table.heads; ++h) {
      const size_t base = (static_cast<size_t>(t) * table.heads + h) * table.pairs;
      for (int p = 0; p < table.pairs; ++p) {
        const Scalar c = static_cast<Scalar>(table.cos[base + p]);
        const Scalar s = static_cast<Scalar>(inverse ? -table.sin[base + p] : table.sin[base + p]);
        Scalar& x0 = rows(t, h * head_dim + 2 * p);
        Scalar& x1 = rows(t, h * head_dim + 2 * p + 1);
        const Scalar a = x0, b = x1;
        x0 = a * c - b * s;
        x1 = a * s + b * c;
      }
    }
  }
}

template <typename Derived>
void apply_rope(Eigen::MatrixBase<Derived>& rows, const TimeAwarePE& pe, const RopeConfig& cfg) {
  rotate_rows(rows, build_rope_table(pe, cfg));
}

}  // namespace ucm
