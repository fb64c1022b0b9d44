#include "ucm/geometry.hpp"

#include "ucm/image.hpp"

#include <json.hpp>

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ucm {

namespace {

constexpr double kRotationTolerance = 1e-6;
constexpr double kRenormalizeDrift = 1e-9;

bool is_rotation(const Eigen::Matrix3d& r, double tol) {
  if (!r.allFinite()) return false;
  const double orth = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return orth <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

}  // namespace

void Intrinsics::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: image size must be positive");
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
    throw std::invalid_argument("intrinsics: principal point outside the image");
}

Intrinsics Intrinsics::from_fov(int width, int height, double horizontal_fov_deg) {
  Intrinsics k;
  k.width = width;
  k.height = height;
  k.fx = 0.5 * width / std::tan(0.5 * horizontal_fov_deg * std::numbers::pi / 180.0);
  k.fy = k.fx;
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  k.validate();
  return k;
}

CameraPose::CameraPose() : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}

CameraPose::CameraPose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  if (!is_rotation(rotation_, kRotationTolerance))
    throw std::invalid_argument("camera pose: rotation is not orthonormal with det 1");
  if (!translation_.allFinite()) throw std::invalid_argument("camera pose: non-finite translation");
}

CameraPose CameraPose::from_matrix(const Eigen::Matrix4d& m) {
  const Eigen::RowVector4d bottom(0, 0, 0, 1);
  if ((m.row(3) - bottom).cwiseAbs().maxCoeff() > kRotationTolerance)
    throw std::invalid_argument("camera pose: last matrix row must be [0 0 0 1]");
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

CameraPose CameraPose::from_axis_angle(const Eigen::Vector3d& axis, double angle_rad,
                                       const Eigen::Vector3d& translation) {
  if (axis.norm() == 0.0) return {Eigen::Matrix3d::Identity(), translation};
  return {Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix(), translation};
}

CameraPose CameraPose::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                               const Eigen::Vector3d& world_up) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d up = world_up - world_up.dot(z) * z;
  if (up.norm() < 1e-12) up = Eigen::Vector3d::UnitZ() - z.z() * z;
  const Eigen::Vector3d y = -up.normalized();
  const Eigen::Vector3d x = y.cross(z);
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return {nearest_rotation(r), eye};
}

Eigen::Matrix4d CameraPose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

CameraPose invert_pose(const CameraPose& p) {
  const Eigen::Matrix3d rt = p.rotation().transpose();
  return {rt, -rt * p.translation()};
}

CameraPose compose(const CameraPose& a, const CameraPose& b) {
  Eigen::Matrix3d r = a.rotation() * b.rotation();
  if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > kRenormalizeDrift)
    r = nearest_rotation(r);
  return {r, a.rotation() * b.translation() + a.translation()};
}

double rotation_angle(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  // atan2 of sine and cosine stays accurate near 0 and pi, unlike acos.
  const Eigen::Matrix3d r = a.transpose() * b;
  const double c = (r.trace() - 1.0) * 0.5;
  const double s = 0.5 * Eigen::Vector3d(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)).norm();
  return std::atan2(s, std::clamp(c, -1.0, 1.0));
}

DepthMap::DepthMap(int w, int h)
    : width(w), height(h), depth(static_cast<size_t>(w) * h, 0.0f), valid(static_cast<size_t>(w) * h, 0) {}

void DepthMap::set(int x, int y, float z) {
  const size_t i = static_cast<size_t>(y) * width + x;
  depth[i] = z;
  valid[i] = (std::isfinite(z) && z > 0.0f) ? 1 : 0;
}

PointCloud lift_depth(const DepthMap& d, const CameraPose& pose, const Intrinsics& K, const Image* image) {
  if (d.width != K.width || d.height != K.height)
    throw std::invalid_argument("lift_depth: depth map size does not match intrinsics");
  if (image && (image->width() != d.width || image->height() != d.height))
    throw std::invalid_argument("lift_depth: image size does not match depth map");
  PointCloud pc;
  pc.points.reserve(d.size());
  pc.pixel.reserve(d.size());
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      if (!d.is_valid(x, y)) continue;
      const double z = d.at(x, y);
      const Eigen::Vector3d cam((x - K.cx) * z / K.fx, (y - K.cy) * z / K.fy, z);
      pc.points.push_back(pose.apply(cam));
      pc.pixel.push_back(y * d.width + x);
      if (image) pc.colors.push_back(image->pixel(x, y));
    }
  }
  return pc;
}

Projection project_point(const Eigen::Vector3d& world, const CameraPose& world_from_cam, const Intrinsics& K) {
  const Eigen::Vector3d cam = world_from_cam.rotation().transpose() * (world - world_from_cam.translation());
  Projection p;
  p.z = cam.z();
  p.valid = cam.z() > kMinProjectionDepth;
  if (p.valid) {
    p.u = K.fx * cam.x() / cam.z() + K.cx;
    p.v = K.fy * cam.y() / cam.z() + K.cy;
  }
  return p;
}

std::vector<Projection> project_points(const PointCloud& pc, const CameraPose& pose, const Intrinsics& K) {
  std::vector<Projection> out;
  out.reserve(pc.size());
  for (const auto& p : pc.points) out.push_back(project_point(p, pose, K));
  return out;
}

int latent_frame_count(int frames, int stride) {
  if (frames < 1) throw std::invalid_argument("latent_frame_count: need at least one frame");
  if (stride < 1) throw std::invalid_argument("latent_frame_count: stride must be >= 1");
  return (frames + stride - 1) / stride;
}

std::vector<std::pair<int, int>> latent_frame_groups(int frames, int stride) {
  const int n = latent_frame_count(frames, stride);
  std::vector<std::pair<int, int>> groups;
  groups.reserve(n);
  groups.emplace_back(0, 1);
  for (int g = 1; g < n; ++g) groups.emplace_back(1 + (g - 1) * stride, 1 + g * stride);
  groups.back().second = frames;
  return groups;
}

Trajectory pool_trajectory(const Trajectory& traj, int stride) {
  if (traj.empty()) throw std::invalid_argument("pool_trajectory: empty trajectory");
  Trajectory out;
  for (const auto& [begin, end] : latent_frame_groups(static_cast<int>(traj.size()), stride)) {
    Eigen::Matrix3d rsum = Eigen::Matrix3d::Zero();
    Eigen::Vector3d tsum = Eigen::Vector3d::Zero();
    for (int i = begin; i < end; ++i) {
      rsum += traj[i].rotation();
      tsum += traj[i].translation();
    }
    const double inv = 1.0 / (end - begin);
    out.emplace_back(end - begin == 1 ? traj[begin].rotation() : nearest_rotation(rsum * inv), tsum * inv);
  }
  return out;
}

Trajectory normalize_relative(const Trajectory& traj) {
  if (traj.empty()) return {};
  const CameraPose first_inv = invert_pose(traj.front());
  Trajectory rel;
  rel.reserve(traj.size());
  double max_norm = 0.0;
  for (const auto& p : traj) {
    rel.push_back(compose(first_inv, p));
    max_norm = std::max(max_norm, rel.back().translation().norm());
  }
  rel.front() = CameraPose::identity();
  const double scale = 1.0 / std::max(max_norm, 1e-8);
  for (auto& p : rel) p = CameraPose(p.rotation(), p.translation() * scale);
  return rel;
}

PoseFile read_pose_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pose file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    PoseFile f;
    const auto& k = j.at("intrinsics");
    f.intrinsics.fx = k.at("fx").get<double>();
    f.intrinsics.fy = k.at("fy").get<double>();
    f.intrinsics.cx = k.at("cx").get<double>();
    f.intrinsics.cy = k.at("cy").get<double>();
    f.intrinsics.width = k.at("width").get<int>();
    f.intrinsics.height = k.at("height").get<int>();
    f.intrinsics.validate();
    for (const auto& m : j.at("poses")) {
      Eigen::Matrix4d mat;
      if (m.size() == 16) {
        for (int i = 0; i < 16; ++i) mat(i / 4, i % 4) = m[i].get<double>();
      } else if (m.size() == 4) {
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c) mat(r, c) = m.at(r).at(c).get<double>();
      } else {
        throw std::invalid_argument("pose entry must be a 4x4 matrix");
      }
      f.poses.push_back(CameraPose::from_matrix(mat));
    }
    return f;
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_pose_file(const std::filesystem::path& path, const PoseFile& file) {
  nlohmann::json j;
  j["intrinsics"] = {{"fx", file.intrinsics.fx}, {"fy", file.intrinsics.fy},
                     {"cx", file.intrinsics.cx}, {"cy", file.intrinsics.cy},
                     {"width", file.intrinsics.width}, {"height", file.intrinsics.height}};
  j["poses"] = nlohmann::json::array();
  for (const auto& p : file.poses) {
    const Eigen::Matrix4d m = p.matrix();
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    j["poses"].push_back(rows);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write pose file " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing pose file " + path.string());
}

}  // namespace ucm
