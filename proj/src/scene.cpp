#include "ucm/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace ucm {

namespace {

constexpr double kEps = 1e-9;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Base hues per scene class; materials jitter around them.
const std::vector<std::vector<Eigen::Vector3f>>& palettes() {
  static const std::vector<std::vector<Eigen::Vector3f>> p{
      {{0.85f, 0.45f, 0.25f}, {0.95f, 0.80f, 0.45f}, {0.60f, 0.25f, 0.20f}, {0.90f, 0.65f, 0.55f}},
      {{0.20f, 0.40f, 0.80f}, {0.45f, 0.75f, 0.90f}, {0.15f, 0.25f, 0.45f}, {0.60f, 0.60f, 0.85f}},
      {{0.30f, 0.65f, 0.30f}, {0.70f, 0.85f, 0.40f}, {0.20f, 0.40f, 0.25f}, {0.55f, 0.75f, 0.60f}},
      {{0.80f, 0.80f, 0.78f}, {0.35f, 0.35f, 0.38f}, {0.85f, 0.20f, 0.30f}, {0.55f, 0.50f, 0.45f}},
  };
  return p;
}

Eigen::Vector3f jitter_color(const Eigen::Vector3f& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> d(-0.08f, 0.08f);
  Eigen::Vector3f out;
  for (int i = 0; i < 3; ++i) out[i] = std::clamp(c[i] + d(rng), 0.05f, 0.95f);
  return out;
}

Material random_material(int class_id, std::mt19937_64& rng) {
  const auto& pal = palettes()[static_cast<size_t>(class_id) % palettes().size()];
  std::uniform_int_distribution<size_t> pick(0, pal.size() - 1);
  std::uniform_int_distribution<int> pattern(1, 3);
  std::uniform_real_distribution<double> period(1.0, 2.0);
  Material m;
  const size_t ia = pick(rng);
  size_t ib = pick(rng);
  if (ib == ia) ib = (ia + 1) % pal.size();
  m.a = jitter_color(pal[ia], rng);
  m.b = jitter_color(pal[ib], rng);
  m.pattern = static_cast<Pattern>(pattern(rng));
  m.period = period(rng);
  return m;
}

float pattern_weight(const Material& m, double u, double v) {
  const double w = kTwoPi / m.period;
  switch (m.pattern) {
    case Pattern::solid:
      return 0.0f;
    case Pattern::stripes:
      return static_cast<float>(0.5 + 0.5 * std::sin(w * u));
    case Pattern::checker:
      return static_cast<float>(0.5 + 0.5 * std::sin(w * u) * std::sin(w * v));
    case Pattern::gradient:
      return static_cast<float>(0.5 + 0.5 * std::sin(0.5 * w * (u + v)));
  }
  return 0.0f;
}

}  // namespace

bool SceneSpec::intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, RayHit* hit) const {
  double best = std::numeric_limits<double>::infinity();
  for (const Plane& p : planes) {
    const double d = dir[p.axis];
    if (d * p.facing >= 0.0) continue;  // back side or parallel
    const double t = (p.offset - origin[p.axis]) / d;
    if (t > kEps && t < best) {
      best = t;
      hit->t = t;
      hit->normal = Eigen::Vector3d::Zero();
      hit->normal[p.axis] = p.facing;
      hit->material = &p.material;
    }
  }
  for (const Box& b : boxes) {
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    int axis = -1;
    double sign = 0.0;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (dir[a] == 0.0) {
        if (origin[a] < b.min[a] || origin[a] > b.max[a]) miss = true;
        continue;
      }
      double lo = (b.min[a] - origin[a]) / dir[a], hi = (b.max[a] - origin[a]) / dir[a];
      double s = -1.0;
      if (lo > hi) {
        std::swap(lo, hi);
        s = 1.0;
      }
      if (lo > t0) {
        t0 = lo;
        axis = a;
        sign = s;
      }
      t1 = std::min(t1, hi);
    }
    if (miss || axis < 0 || t0 > t1 || t0 <= kEps || t0 >= best) continue;
    best = t0;
    hit->t = t0;
    hit->normal = Eigen::Vector3d::Zero();
    hit->normal[axis] = sign;
    hit->material = &b.material;
  }
  if (!std::isfinite(best)) return false;
  hit->point = origin + best * dir;
  return true;
}

void SceneSpec::validate() const {
  for (const Box& b : boxes) {
    if ((b.min.array() >= b.max.array()).any()) throw std::invalid_argument("scene: inverted box");
    if ((b.min.array() < -room_half.array() - kEps).any() || (b.max.array() > room_half.array() + kEps).any())
      throw std::invalid_argument("scene: box outside the room");
  }
  for (const Plane& p : planes)
    if (p.axis < 0 || p.axis > 2 || (p.facing != 1 && p.facing != -1))
      throw std::invalid_argument("scene: malformed plane");
}

Eigen::Vector3f shade(const RayHit& hit) {
  const Material& m = *hit.material;
  int axis = 0;
  hit.normal.cwiseAbs().maxCoeff(&axis);
  const double u = hit.point[(axis + 1) % 3], v = hit.point[(axis + 2) % 3];
  const float w = pattern_weight(m, u, v);
  const Eigen::Vector3f albedo = m.a + w * (m.b - m.a);
  static const Eigen::Vector3d light = Eigen::Vector3d(0.3, 0.8, 0.5).normalized();
  const float lit = static_cast<float>(0.75 + 0.25 * hit.normal.dot(light));
  return (albedo * lit).cwiseMax(0.0f).cwiseMin(1.0f);
}

SceneSpec generate_scene(uint64_t seed, int class_id) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(class_id)};
  std::mt19937_64 rng(seq);
  SceneSpec s;
  s.seed = seed;
  s.class_id = class_id;
  const Eigen::Vector3d& h = s.room_half;
  for (int axis = 0; axis < 3; ++axis) {
    s.planes.push_back({axis, -h[axis], 1, random_material(class_id, rng)});
    s.planes.push_back({axis, h[axis], -1, random_material(class_id, rng)});
  }
  std::uniform_real_distribution<double> jitter(-0.25, 0.25), radius(2.5, 3.2), half_xz(0.3, 0.6),
      half_y(0.3, 0.9);
  const int count = 5;
  for (int k = 0; k < count; ++k) {
    const double theta = kTwoPi * (k + 0.5 + jitter(rng)) / count;
    const double r = radius(rng);
    const Eigen::Vector3d half(half_xz(rng), half_y(rng), half_xz(rng));
    const Eigen::Vector3d center(r * std::cos(theta), -h.y() + half.y(), r * std::sin(theta));
    s.boxes.push_back({center - half, center + half, random_material(class_id, rng)});
  }
  s.validate();
  return s;
}

void render_view(const SceneSpec& scene, const CameraPose& pose, const Intrinsics& K, Image* image,
                 DepthMap* depth) {
  K.validate();
  if (image) *image = Image(K.width, K.height);
  if (depth) *depth = DepthMap(K.width, K.height);
  const Eigen::Matrix3d& R = pose.rotation();
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      // Unit camera z, so the hit distance is the camera depth.
      const Eigen::Vector3d dir = R * Eigen::Vector3d((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
      RayHit hit;
      if (!scene.intersect(pose.translation(), dir, &hit)) continue;
      if (image) image->set_pixel(x, y, shade(hit));
      if (depth) depth->set(x, y, static_cast<float>(hit.t));
    }
  }
}

LoopPath::LoopPath(std::vector<Eigen::Vector3d> control, double yaw_wobble, double pitch)
    : control_(std::move(control)), yaw_wobble_(yaw_wobble), pitch_(pitch) {
  if (control_.size() < 3) throw std::invalid_argument("LoopPath: need at least three control points");
}

LoopPath LoopPath::random(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> base(0.9, 1.2), jitter(-0.1, 0.1), height(-0.15, 0.15),
      wobble(4.0, 10.0), pitch(-6.0, 0.0);
  const double r0 = base(rng);
  const int k = 6;
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < k; ++i) {
    const double theta = kTwoPi * i / k;
    const double r = r0 + jitter(rng);
    pts.emplace_back(r * std::cos(theta), height(rng), r * std::sin(theta));
  }
  const double deg = std::numbers::pi / 180.0;
  return LoopPath(std::move(pts), wobble(rng) * deg, pitch(rng) * deg);
}

namespace {

struct Segment {
  int i = 0;
  double u = 0.0;
};

Segment locate(double s, size_t n) {
  double w = s - std::floor(s);
  double x = w * static_cast<double>(n);
  int i = static_cast<int>(std::floor(x));
  if (i >= static_cast<int>(n)) i = 0, x = 0.0;
  return {i, x - i};
}

}  // namespace

Eigen::Vector3d LoopPath::position(double s) const {
  const size_t n = control_.size();
  const auto [i, u] = locate(s, n);
  const auto& p0 = control_[(i + n - 1) % n];
  const auto& p1 = control_[i];
  const auto& p2 = control_[(i + 1) % n];
  const auto& p3 = control_[(i + 2) % n];
  return 0.5 * (2.0 * p1 + (p2 - p0) * u + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u +
                (3.0 * p1 - p0 - 3.0 * p2 + p3) * u * u * u);
}

Eigen::Vector3d LoopPath::tangent(double s) const {
  const size_t n = control_.size();
  const auto [i, u] = locate(s, n);
  const auto& p0 = control_[(i + n - 1) % n];
  const auto& p1 = control_[i];
  const auto& p2 = control_[(i + 1) % n];
  const auto& p3 = control_[(i + 2) % n];
  return 0.5 * ((p2 - p0) + 2.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u +
                3.0 * (3.0 * p1 - p0 - 3.0 * p2 + p3) * u * u);
}

CameraPose LoopPath::pose(double s) const {
  const Eigen::Vector3d eye = position(s);
  Eigen::Vector3d t = tangent(s);
  t.y() = 0.0;
  const double yaw = yaw_wobble_ * std::sin(2.0 * kTwoPi * s);
  const Eigen::Vector3d h = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) * t.normalized();
  const Eigen::Vector3d dir = std::cos(pitch_) * h + std::sin(pitch_) * Eigen::Vector3d::UnitY();
  return CameraPose::look_at(eye, eye + dir);
}

Trajectory sample_loop(const LoopPath& path, double start, int frames, int frames_per_loop) {
  if (frames < 1 || frames_per_loop < 1) throw std::invalid_argument("sample_loop: sizes must be positive");
  Trajectory out;
  for (int i = 0; i < frames; ++i) out.push_back(path.pose(start + static_cast<double>(i) / frames_per_loop));
  return out;
}

void VideoClip::validate() const {
  if (frames.empty()) throw std::invalid_argument("clip: no frames");
  if (poses.size() != frames.size() || depth.size() != frames.size())
    throw std::invalid_argument("clip: frame, pose and depth counts differ");
  K.validate();
  for (size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].width() != K.width || frames[i].height() != K.height || depth[i].width != K.width ||
        depth[i].height != K.height)
      throw std::invalid_argument("clip: frame " + std::to_string(i) + " does not match the intrinsics");
  }
}

VideoClip render_clip(const SceneSpec& scene, const Trajectory& poses, const Intrinsics& K) {
  VideoClip clip;
  clip.K = K;
  clip.class_id = scene.class_id;
  clip.poses = poses;
  for (const auto& p : poses) {
    Image img;
    DepthMap d;
    render_view(scene, p, K, &img, &d);
    clip.frames.push_back(img.quantized());
    clip.depth.push_back(std::move(d));
  }
  clip.validate();
  return clip;
}

void save_clip(const std::filesystem::path& dir, const VideoClip& clip) {
  namespace fs = std::filesystem;
  clip.validate();
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "depth");
  char name[32];
  for (int i = 0; i < clip.size(); ++i) {
    std::snprintf(name, sizeof name, "%05d", i);
    write_png(dir / "frames" / (std::string(name) + ".png"), clip.frames[i]);
    write_depth(dir / "depth" / (std::string(name) + ".f32"), clip.depth[i]);
  }
  write_pose_file(dir / "poses.json", {clip.K, clip.poses});
  std::ofstream os(dir / "clip.json");
  if (!os) throw std::runtime_error("cannot write " + (dir / "clip.json").string());
  os << nlohmann::json{{"class_id", clip.class_id}, {"frames", clip.size()}}.dump(1) << "\n";
  if (!os) throw std::runtime_error("write failed: " + (dir / "clip.json").string());
}

VideoClip load_clip(const std::filesystem::path& dir) {
  const PoseFile pf = read_pose_file(dir / "poses.json");
  std::ifstream is(dir / "clip.json");
  if (!is) throw std::runtime_error("cannot open " + (dir / "clip.json").string());
  nlohmann::json meta;
  try {
    is >> meta;
  } catch (const std::exception& e) {
    throw std::runtime_error("bad clip file " + (dir / "clip.json").string() + ": " + e.what());
  }
  VideoClip clip;
  clip.K = pf.intrinsics;
  clip.poses = pf.poses;
  clip.class_id = meta.at("class_id").get<int>();
  char name[32];
  for (size_t i = 0; i < pf.poses.size(); ++i) {
    std::snprintf(name, sizeof name, "%05zu", i);
    clip.frames.push_back(read_png(dir / "frames" / (std::string(name) + ".png")));
    clip.depth.push_back(read_depth(dir / "depth" / (std::string(name) + ".f32")));
  }
  clip.validate();
  return clip;
}

}  // namespace ucm
