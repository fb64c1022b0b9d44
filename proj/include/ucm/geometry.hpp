#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ucm {

class Image;

/// Pinhole camera. Pixel (0,0) is the center of the top-left pixel.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws std::invalid_argument unless fx, fy > 0, sizes positive and the
  /// principal point lies inside the image.
  void validate() const;

  /// Square-pixel camera with the principal point at the image center.
  static Intrinsics from_fov(int width, int height, double horizontal_fov_deg);
};

/// Rigid camera-to-world transform: x_world = rotation * x_cam + translation.
class CameraPose {
 public:
  CameraPose();
  /// Throws std::invalid_argument if `rotation` is not a proper rotation
  /// (RᵀR = I and det R = 1, both within 1e-6).
  CameraPose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static CameraPose identity() { return {}; }
  static CameraPose from_matrix(const Eigen::Matrix4d& m);
  /// Rotation of `angle_rad` about `axis` with the given translation.
  static CameraPose from_axis_angle(const Eigen::Vector3d& axis, double angle_rad,
                                    const Eigen::Vector3d& translation = Eigen::Vector3d::Zero());
  /// Camera at `eye` looking at `target`. Camera axes: x right, y down, z forward.
  static CameraPose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                            const Eigen::Vector3d& world_up = Eigen::Vector3d(0, 1, 0));

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Matrix4d matrix() const;

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
};

using Trajectory = std::vector<CameraPose>;

/// Nearest rotation in the Frobenius sense (SVD projection onto SO(3)).
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m);

CameraPose invert_pose(const CameraPose& p);
/// Returns the transform that applies `b` first, then `a`.
CameraPose compose(const CameraPose& a, const CameraPose& b);

/// Geodesic angle between two rotations, in radians.
double rotation_angle(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> depth;     // row-major, camera-z in world units
  std::vector<uint8_t> valid;   // 1 where depth is usable

  DepthMap() = default;
  DepthMap(int w, int h);

  float at(int x, int y) const { return depth[static_cast<size_t>(y) * width + x]; }
  bool is_valid(int x, int y) const { return valid[static_cast<size_t>(y) * width + x] != 0; }
  void set(int x, int y, float z);
  size_t size() const { return depth.size(); }
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;  // world frame
  std::vector<int> pixel;               // source pixel index y*W + x
  std::vector<Eigen::Vector3f> colors;  // empty when lifted without an image

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
  bool valid = false;
};

inline constexpr double kMinProjectionDepth = 1e-4;

/// Back-projects every valid pixel through `K` and moves it to the world
/// frame with `pose`. Colors are attached when `image` is given.
PointCloud lift_depth(const DepthMap& d, const CameraPose& pose, const Intrinsics& K,
                      const Image* image = nullptr);

/// Pinhole projection into the camera at `pose`. Coordinates are not clamped
/// to the image; `valid` only reports whether the point is in front.
std::vector<Projection> project_points(const PointCloud& pc, const CameraPose& pose,
                                       const Intrinsics& K);
Projection project_point(const Eigen::Vector3d& world, const CameraPose& world_from_cam,
                         const Intrinsics& K);

/// Number of latent frames for T video frames at temporal stride r.
int latent_frame_count(int frames, int stride);

/// Frame ranges [begin, end) of each latent frame: frame 0 alone, then groups
/// of `stride`. Frames beyond the last full group are folded into it.
std::vector<std::pair<int, int>> latent_frame_groups(int frames, int stride);

/// Averages poses over the latent grouping: arithmetic mean of translations,
/// chordal mean of rotations.
Trajectory pool_trajectory(const Trajectory& traj, int stride);

/// Expresses poses relative to the first one and scales translations so the
/// largest has unit norm.
Trajectory normalize_relative(const Trajectory& traj);

struct PoseFile {
  Intrinsics intrinsics;
  Trajectory poses;
};

PoseFile read_pose_file(const std::filesystem::path& path);
void write_pose_file(const std::filesystem::path& path, const PoseFile& file);

}  // namespace ucm
