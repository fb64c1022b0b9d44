#pragma once

#include "ucm/geometry.hpp"
#include "ucm/image.hpp"
#include "ucm/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <random>

namespace ucm {

struct SplatResult {
  Image image;       // unmasked pixels are 0
  Mask mask;         // true where at least one splat landed
  DepthMap zbuffer;  // camera z of the surviving splat
};

/// Nearest-pixel forward splatting with a z-buffer. On equal depth the
/// earlier point wins. Points without colors render white.
SplatResult splat_render(const PointCloud& pc, const CameraPose& pose, const Intrinsics& K);

struct OffsetDistribution {
  double rot_max_deg = 15.0;
  double trans_max = 0.3;
  int shift_max = 8;  // temporal shift drawn uniformly from [-shift_max, shift_max]

  void validate() const;
};

/// Rotation angle uniform in [0, rot_max] about a uniform axis; translation
/// uniform in the box [-trans_max, trans_max]³.
CameraPose sample_offset(std::mt19937_64& rng, const OffsetDistribution& dist);

struct CurationSample {
  int source = 0;  // i
  CameraPose offset;
  int shift = 0;   // Δi
  CameraPose render_pose;
  Image image;
  Mask mask;
  DepthMap zbuffer;

  int target() const { return source + shift; }
};

/// Source of per-frame depth for lifting. The synthetic clips carry exact
/// depth; an estimator can be substituted here.
class DepthProvider {
 public:
  virtual ~DepthProvider() = default;
  virtual DepthMap depth(const VideoClip& clip, int frame) const = 0;
};

class OracleDepthProvider final : public DepthProvider {
 public:
  DepthMap depth(const VideoClip& clip, int frame) const override { return clip.depth.at(frame); }
};

/// Lifts frame i and renders it from compose(pose[i + shift], offset).
/// Throws std::out_of_range if i or i + shift is outside the clip.
CurationSample make_revisit_sample(const VideoClip& clip, int i, const CameraPose& offset, int shift,
                                   const DepthProvider& provider = OracleDepthProvider());

/// Draws i, Δi (kept in range) and Δc.
CurationSample random_revisit_sample(const VideoClip& clip, std::mt19937_64& rng, const OffsetDistribution& dist,
                                     const DepthProvider& provider = OracleDepthProvider());

/// Directory: rendered.png, mask.png, meta.json (i, offset 4×4, shift).
void save_sample(const std::filesystem::path& dir, const CurationSample& s);

struct DatasetConfig {
  uint64_t seed = 0;
  int scenes = 4;
  int clips_per_scene = 2;
  int frames = 33;
  int width = 64;
  int height = 64;
  double fov_deg = 60.0;
  int frames_per_loop = 32;
  int samples_per_clip = 4;
  int classes = 4;
  OffsetDistribution offsets;

  void validate() const;
};

struct DatasetSummary {
  int scenes = 0;
  int clips = 0;
  int frames = 0;
  int samples = 0;
};

/// Writes <root>/scene_%03d/clip_%03d/{frames,depth,poses.json,clip.json,
/// curation/%05d.sample} plus scene_%03d/scene.json. Scene s has class s mod
/// classes.
DatasetSummary generate_synthetic_dataset(const DatasetConfig& cfg, const std::filesystem::path& root);

/// Scene and loop used for (seed, scene index); shared by the dataset writer
/// and evaluation so held-out clips can be rendered on demand.
SceneSpec dataset_scene(const DatasetConfig& cfg, int scene);
LoopPath dataset_loop(const DatasetConfig& cfg, int scene);
/// Loop parameter where clip c of a scene starts.
double dataset_clip_start(const DatasetConfig& cfg, int clip);

/// Regenerates the scene of a dataset scene directory from its scene.json.
SceneSpec load_scene(const std::filesystem::path& scene_dir);

/// Every clip directory under a dataset root, sorted.
std::vector<std::filesystem::path> list_clips(const std::filesystem::path& root);

}  // namespace ucm
