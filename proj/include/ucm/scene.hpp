#pragma once

#include "ucm/geometry.hpp"
#include "ucm/image.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ucm {

enum class Pattern { solid, stripes, checker, gradient };

/// Smooth two-color texture in surface coordinates.
struct Material {
  Eigen::Vector3f a{0.5f, 0.5f, 0.5f};
  Eigen::Vector3f b{0.5f, 0.5f, 0.5f};
  Pattern pattern = Pattern::solid;
  double period = 1.0;
};

/// Axis-aligned solid box, seen from outside.
struct Box {
  Eigen::Vector3d min;
  Eigen::Vector3d max;
  Material material;
};

/// Infinite axis-aligned plane visible from the side its normal points to.
struct Plane {
  int axis = 1;        // 0 = x, 1 = y, 2 = z
  double offset = 0.0;
  int facing = 1;      // +1 or -1
  Material material;
};

struct RayHit {
  double t = 0.0;
  Eigen::Vector3d point;
  Eigen::Vector3d normal;
  const Material* material = nullptr;
};

struct SceneSpec {
  uint64_t seed = 0;
  int class_id = 0;
  Eigen::Vector3d room_half{4.0, 1.5, 4.0};
  std::vector<Box> boxes;
  std::vector<Plane> planes;

  /// Nearest hit with t > 1e-9; false if the ray escapes.
  bool intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, RayHit* hit) const;
  /// Throws std::invalid_argument if any box leaves the room or is inverted.
  void validate() const;
};

/// Shaded color of a surface point under the scene's fixed light.
Eigen::Vector3f shade(const RayHit& hit);

/// Closed room (floor, ceiling, four walls) plus boxes placed around the
/// center, colored from a palette chosen by `class_id`. Deterministic.
SceneSpec generate_scene(uint64_t seed, int class_id);

/// Ray-cast render: one ray through every pixel center. Depth is camera z.
void render_view(const SceneSpec& scene, const CameraPose& pose, const Intrinsics& K, Image* image,
                 DepthMap* depth);

/// Periodic Catmull-Rom loop through control points around the room center.
/// The camera looks along the direction of travel with a small periodic yaw
/// and pitch wobble, so pose(s) is periodic in s with period 1.
class LoopPath {
 public:
  LoopPath() = default;
  explicit LoopPath(std::vector<Eigen::Vector3d> control, double yaw_wobble = 0.0, double pitch = 0.0);

  static LoopPath random(uint64_t seed);

  Eigen::Vector3d position(double s) const;
  Eigen::Vector3d tangent(double s) const;
  CameraPose pose(double s) const;
  const std::vector<Eigen::Vector3d>& control() const { return control_; }

 private:
  std::vector<Eigen::Vector3d> control_;
  double yaw_wobble_ = 0.0;
  double pitch_ = 0.0;
};

struct VideoClip {
  std::vector<Image> frames;
  Trajectory poses;
  std::vector<DepthMap> depth;
  Intrinsics K;
  int class_id = 0;

  int size() const { return static_cast<int>(frames.size()); }
  /// Throws std::invalid_argument on length or size mismatches.
  void validate() const;
};

/// Renders `poses` with quantized 8-bit colors so clips survive PNG storage.
VideoClip render_clip(const SceneSpec& scene, const Trajectory& poses, const Intrinsics& K);

/// `frames` poses starting at loop parameter `start`, `frames_per_loop`
/// frames per full loop.
Trajectory sample_loop(const LoopPath& path, double start, int frames, int frames_per_loop);

/// Layout: frames/%05d.png, depth/%05d.f32, poses.json, clip.json.
void save_clip(const std::filesystem::path& dir, const VideoClip& clip);
VideoClip load_clip(const std::filesystem::path& dir);

}  // namespace ucm
