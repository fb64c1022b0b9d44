#include "ucm/curation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ucm {

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t derive(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  return splitmix(splitmix(splitmix(seed ^ splitmix(a)) ^ b) ^ c);
}

nlohmann::json matrix_json(const Eigen::Matrix4d& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
  return rows;
}

}  // namespace

SplatResult splat_render(const PointCloud& pc, const CameraPose& pose, const Intrinsics& K) {
  K.validate();
  SplatResult out;
  out.image = Image(K.width, K.height);
  out.mask = Mask(K.width, K.height);
  out.zbuffer = DepthMap(K.width, K.height);
  std::vector<int> winner(static_cast<size_t>(K.width) * K.height, -1);
  const auto proj = project_points(pc, pose, K);
  for (size_t i = 0; i < proj.size(); ++i) {
    const Projection& p = proj[i];
    if (!p.valid) continue;
    const double fx = std::floor(p.u + 0.5), fy = std::floor(p.v + 0.5);
    if (fx < 0 || fy < 0 || fx >= K.width || fy >= K.height) continue;
    const size_t pix = static_cast<size_t>(fy) * K.width + static_cast<size_t>(fx);
    if (winner[pix] >= 0 && !(p.z < proj[winner[pix]].z)) continue;
    winner[pix] = static_cast<int>(i);
  }
  for (size_t pix = 0; pix < winner.size(); ++pix) {
    const int w = winner[pix];
    if (w < 0) continue;
    const int x = static_cast<int>(pix % K.width), y = static_cast<int>(pix / K.width);
    out.mask.bits[pix] = 1;
    out.image.set_pixel(x, y, pc.colors.empty() ? Eigen::Vector3f::Ones() : pc.colors[w]);
    out.zbuffer.set(x, y, static_cast<float>(proj[w].z));
  }
  return out;
}

void OffsetDistribution::validate() const {
  if (!(rot_max_deg >= 0.0 && rot_max_deg <= 180.0)) throw std::invalid_argument("offsets: rot_max must be in [0, 180]");
  if (!(trans_max >= 0.0) || !std::isfinite(trans_max)) throw std::invalid_argument("offsets: trans_max must be >= 0");
  if (shift_max < 0) throw std::invalid_argument("offsets: shift_max must be >= 0");
}

CameraPose sample_offset(std::mt19937_64& rng, const OffsetDistribution& dist) {
  dist.validate();
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::Vector3d axis(g(rng), g(rng), g(rng));
  while (axis.norm() < 1e-12) axis = Eigen::Vector3d(g(rng), g(rng), g(rng));
  const double angle = unit(rng) * dist.rot_max_deg * std::numbers::pi / 180.0;
  Eigen::Vector3d t;
  for (int i = 0; i < 3; ++i) t[i] = (2.0 * unit(rng) - 1.0) * dist.trans_max;
  return CameraPose::from_axis_angle(axis, angle, t);
}

CurationSample make_revisit_sample(const VideoClip& clip, int i, const CameraPose& offset, int shift,
                                   const DepthProvider& provider) {
  const int n = clip.size();
  if (i < 0 || i >= n) throw std::out_of_range("make_revisit_sample: source frame " + std::to_string(i) + " outside clip");
  if (i + shift < 0 || i + shift >= n)
    throw std::out_of_range("make_revisit_sample: shifted frame " + std::to_string(i + shift) + " outside clip");
  CurationSample s;
  s.source = i;
  s.offset = offset;
  s.shift = shift;
  s.render_pose = compose(clip.poses[i + shift], offset);
  const PointCloud pc = lift_depth(provider.depth(clip, i), clip.poses[i], clip.K, &clip.frames[i]);
  SplatResult r = splat_render(pc, s.render_pose, clip.K);
  s.image = std::move(r.image);
  s.mask = std::move(r.mask);
  s.zbuffer = std::move(r.zbuffer);
  return s;
}

CurationSample random_revisit_sample(const VideoClip& clip, std::mt19937_64& rng, const OffsetDistribution& dist,
                                     const DepthProvider& provider) {
  dist.validate();
  const int n = clip.size();
  const int i = std::uniform_int_distribution<int>(0, n - 1)(rng);
  const int lo = std::max(-dist.shift_max, -i), hi = std::min(dist.shift_max, n - 1 - i);
  const int shift = std::uniform_int_distribution<int>(lo, hi)(rng);
  const CameraPose offset = sample_offset(rng, dist);
  return make_revisit_sample(clip, i, offset, shift, provider);
}

void save_sample(const std::filesystem::path& dir, const CurationSample& s) {
  std::filesystem::create_directories(dir);
  write_png(dir / "rendered.png", s.image);
  write_mask_png(dir / "mask.png", s.mask);
  const nlohmann::json meta{{"i", s.source}, {"delta_c", matrix_json(s.offset.matrix())}, {"delta_i", s.shift}};
  std::ofstream os(dir / "meta.json");
  if (!os) throw std::runtime_error("cannot write " + (dir / "meta.json").string());
  os << meta.dump(1) << "\n";
  if (!os) throw std::runtime_error("write failed: " + (dir / "meta.json").string());
}

void DatasetConfig::validate() const {
  if (scenes < 1 || clips_per_scene < 1 || frames < 1) throw std::invalid_argument("dataset: sizes must be >= 1");
  if (width < 1 || height < 1 || frames_per_loop < 1 || classes < 1 || samples_per_clip < 0)
    throw std::invalid_argument("dataset: invalid image size, loop length, class count or sample count");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw std::invalid_argument("dataset: fov must be in (0, 180)");
  offsets.validate();
}

SceneSpec dataset_scene(const DatasetConfig& cfg, int scene) {
  return generate_scene(derive(cfg.seed, 1, static_cast<uint64_t>(scene)), scene % cfg.classes);
}

LoopPath dataset_loop(const DatasetConfig& cfg, int scene) {
  return LoopPath::random(derive(cfg.seed, 2, static_cast<uint64_t>(scene)));
}

double dataset_clip_start(const DatasetConfig& cfg, int clip) {
  return static_cast<double>(clip) / cfg.clips_per_scene;
}

DatasetSummary generate_synthetic_dataset(const DatasetConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  const Intrinsics K = Intrinsics::from_fov(cfg.width, cfg.height, cfg.fov_deg);
  DatasetSummary summary;
  char name[32];
  for (int s = 0; s < cfg.scenes; ++s) {
    const SceneSpec scene = dataset_scene(cfg, s);
    const LoopPath loop = dataset_loop(cfg, s);
    std::snprintf(name, sizeof name, "scene_%03d", s);
    const auto scene_dir = root / name;
    std::filesystem::create_directories(scene_dir);
    {
      std::ofstream os(scene_dir / "scene.json");
      os << nlohmann::json{{"seed", scene.seed}, {"class_id", scene.class_id}}.dump(2) << "\n";
      if (!os) throw std::runtime_error("cannot write " + (scene_dir / "scene.json").string());
    }
    for (int c = 0; c < cfg.clips_per_scene; ++c) {
      std::snprintf(name, sizeof name, "clip_%03d", c);
      const auto clip_dir = scene_dir / name;
      const Trajectory poses = sample_loop(loop, dataset_clip_start(cfg, c), cfg.frames, cfg.frames_per_loop);
      const VideoClip clip = render_clip(scene, poses, K);
      save_clip(clip_dir, clip);
      std::mt19937_64 rng(derive(cfg.seed, 3, static_cast<uint64_t>(s), static_cast<uint64_t>(c)));
      for (int k = 0; k < cfg.samples_per_clip; ++k) {
        std::snprintf(name, sizeof name, "%05d.sample", k);
        save_sample(clip_dir / "curation" / name, random_revisit_sample(clip, rng, cfg.offsets));
        ++summary.samples;
      }
      ++summary.clips;
      summary.frames += clip.size();
    }
    ++summary.scenes;
  }
  return summary;
}

SceneSpec load_scene(const std::filesystem::path& scene_dir) {
  const auto path = scene_dir / "scene.json";
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(is);
    return generate_scene(j.at("seed").get<uint64_t>(), j.at("class_id").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad scene file " + path.string() + ": " + e.what());
  }
}

std::vector<std::filesystem::path> list_clips(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root is not a directory: " + root.string());
  std::vector<fs::path> out;
  for (const auto& scene : fs::directory_iterator(root)) {
    if (!scene.is_directory()) continue;
    for (const auto& clip : fs::directory_iterator(scene.path()))
      if (clip.is_directory() && fs::exists(clip.path() / "clip.json")) out.push_back(clip.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace ucm
