#include "ucm/memory.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace ucm {

namespace {

// Stratified points in the open unit cube: k³ jittered cells plus uniform
// leftovers when `n` is not a cube.
std::vector<Eigen::Vector3d> unit_samples(int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(n);
  int k = static_cast<int>(std::cbrt(static_cast<double>(n)));
  while ((k + 1) * (k + 1) * (k + 1) <= n) ++k;
  while (k > 0 && k * k * k > n) --k;
  auto jitter = [&](int cell, int cells) { return (cell + 0.5 + 0.9 * (u(rng) - 0.5)) / cells; };
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      for (int l = 0; l < k; ++l) pts.emplace_back(jitter(i, k), jitter(j, k), jitter(l, k));
  while (static_cast<int>(pts.size()) < n) pts.emplace_back(jitter(0, 1), jitter(0, 1), jitter(0, 1));
  return pts;
}

// Volume-uniform map from the unit cube into a camera frustum (camera frame).
Eigen::Vector3d frustum_point(const Eigen::Vector3d& s, const Intrinsics& K, double near, double far) {
  const double n3 = near * near * near, f3 = far * far * far;
  const double z = std::cbrt(n3 + s.z() * (f3 - n3));
  const double px = -0.5 + s.x() * K.width;
  const double py = -0.5 + s.y() * K.height;
  return {(px - K.cx) / K.fx * z, (py - K.cy) / K.fy * z, z};
}

}  // namespace

bool in_frustum(const Eigen::Vector3d& world, const CameraPose& pose, const Intrinsics& K, double near, double far) {
  const Eigen::Vector3d c = pose.rotation().transpose() * (world - pose.translation());
  if (!(c.z() >= near && c.z() <= far)) return false;
  const double u = K.fx * c.x() / c.z() + K.cx;
  const double v = K.fy * c.y() / c.z() + K.cy;
  return u >= -0.5 && u <= K.width - 0.5 && v >= -0.5 && v <= K.height - 0.5;
}

double frustum_iou(const CameraPose& a, const CameraPose& b, const Intrinsics& K, const FrustumConfig& cfg) {
  if (!(cfg.near > 0.0) || !(cfg.near < cfg.far) || cfg.samples < 1)
    throw std::invalid_argument("frustum_iou: need 0 < near < far and at least one sample");
  K.validate();
  const auto pts = unit_samples(cfg.samples, cfg.seed);
  int a_in_b = 0, b_in_a = 0;
  for (const auto& s : pts) {
    const Eigen::Vector3d p = frustum_point(s, K, cfg.near, cfg.far);
    a_in_b += in_frustum(a.apply(p), b, K, cfg.near, cfg.far);
    b_in_a += in_frustum(b.apply(p), a, K, cfg.near, cfg.far);
  }
  // Equal volumes: |A∩B|/V is estimated from both sides and averaged.
  const double inter = 0.5 * (a_in_b + b_in_a) / static_cast<double>(pts.size());
  return inter / (2.0 - inter);
}

void MemoryBank::append(MemoryRecord r) {
  if (!records_.empty() && r.time <= records_.back().time)
    throw std::invalid_argument("MemoryBank: time index " + std::to_string(r.time) + " is not after " +
                                std::to_string(records_.back().time));
  records_.push_back(std::move(r));
}

void MemoryBank::save(const std::filesystem::path& dir, const Intrinsics& K) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "depth");
  PoseFile pf;
  pf.intrinsics = K;
  nlohmann::json index = nlohmann::json::array();
  char name[32];
  for (size_t i = 0; i < records_.size(); ++i) {
    std::snprintf(name, sizeof name, "%05zu", i);
    write_png(dir / "frames" / (std::string(name) + ".png"), records_[i].image);
    write_depth(dir / "depth" / (std::string(name) + ".f32"), records_[i].depth);
    pf.poses.push_back(records_[i].pose);
    index.push_back(records_[i].time);
  }
  write_pose_file(dir / "poses.json", pf);
  std::ofstream os(dir / "index.json");
  if (!os) throw std::runtime_error("cannot write " + (dir / "index.json").string());
  os << nlohmann::json{{"time", index}}.dump(1) << "\n";
}

MemoryBank MemoryBank::load(const std::filesystem::path& dir, Intrinsics* K) {
  const PoseFile pf = read_pose_file(dir / "poses.json");
  std::ifstream is(dir / "index.json");
  if (!is) throw std::runtime_error("cannot open " + (dir / "index.json").string());
  nlohmann::json index;
  try {
    is >> index;
  } catch (const std::exception& e) {
    throw std::runtime_error("bad index file " + (dir / "index.json").string() + ": " + e.what());
  }
  const auto& times = index.at("time");
  if (times.size() != pf.poses.size()) throw std::runtime_error("bank index and poses disagree in " + dir.string());
  MemoryBank bank;
  char name[32];
  for (size_t i = 0; i < pf.poses.size(); ++i) {
    std::snprintf(name, sizeof name, "%05zu", i);
    MemoryRecord r;
    r.image = read_png(dir / "frames" / (std::string(name) + ".png"));
    r.depth = read_depth(dir / "depth" / (std::string(name) + ".f32"));
    r.pose = pf.poses[i];
    r.time = times[i].get<long>();
    bank.append(std::move(r));
  }
  if (K) *K = pf.intrinsics;
  return bank;
}

RetrievalResult retrieve_top_m(const MemoryBank& bank, const Trajectory& targets, const Intrinsics& K, int m,
                               const FrustumConfig& cfg) {
  if (bank.empty()) throw std::invalid_argument("retrieve_top_m: memory bank is empty");
  if (targets.empty()) throw std::invalid_argument("retrieve_top_m: no target frames");
  const int nb = static_cast<int>(bank.size()), nt = static_cast<int>(targets.size());
  Eigen::MatrixXd all(nb, nt);
  std::vector<double> score(nb);
  for (int j = 0; j < nb; ++j) {
    for (int i = 0; i < nt; ++i) all(j, i) = frustum_iou(bank[j].pose, targets[i], K, cfg);
    score[j] = all.row(j).maxCoeff();
  }
  std::vector<int> order(nb);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    if (score[x] != score[y]) return score[x] > score[y];
    return bank[x].time > bank[y].time;
  });
  const int keep = std::clamp(m, 0, nb);
  RetrievalResult r;
  r.iou.resize(keep, nt);
  for (int s = 0; s < keep; ++s) {
    r.indices.push_back(order[s]);
    r.scores.push_back(score[order[s]]);
    r.iou.row(s) = all.row(order[s]);
  }
  if (nt >= 2) r.assignments = assign_viewpoints(r);
  return r;
}

std::vector<int> assign_viewpoints(const RetrievalResult& result) {
  const Eigen::Index n = result.iou.cols();
  if (result.iou.rows() > 0 && n < 2)
    throw std::invalid_argument("assign_viewpoints: need at least two target frames");
  std::vector<int> k;
  for (Eigen::Index j = 0; j < result.iou.rows(); ++j) {
    Eigen::Index best = 1;
    for (Eigen::Index i = 2; i < n; ++i)
      if (result.iou(j, i) > result.iou(j, best)) best = i;
    k.push_back(static_cast<int>(best) + 1);
  }
  return k;
}

}  // namespace ucm
