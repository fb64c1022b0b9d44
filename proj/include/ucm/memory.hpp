#pragma once

#include "ucm/geometry.hpp"
#include "ucm/image.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ucm {

struct FrustumConfig {
  double near = 0.1;
  double far = 20.0;
  int samples = 4096;  // per frustum
  uint64_t seed = 0x6a09e667f3bcc908ull;
};

/// Monte-Carlo IoU of two viewing frusta sharing intrinsics. Both frusta are
/// sampled with the same stratified unit-cube pattern mapped volume-uniformly
/// into each, so the estimate is symmetric and equals 1 for identical poses.
double frustum_iou(const CameraPose& a, const CameraPose& b, const Intrinsics& K, const FrustumConfig& cfg = {});

/// True if a world point lies in the frustum of `pose` between near and far.
bool in_frustum(const Eigen::Vector3d& world, const CameraPose& pose, const Intrinsics& K, double near, double far);

struct MemoryRecord {
  Image image;
  DepthMap depth;
  CameraPose pose;
  long time = 0;  // global frame index
};

/// Append-only store of observed or generated frames.
class MemoryBank {
 public:
  /// Throws std::invalid_argument unless `r.time` exceeds every stored time.
  void append(MemoryRecord r);
  size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const MemoryRecord& operator[](size_t i) const { return records_[i]; }
  const std::vector<MemoryRecord>& records() const { return records_; }

  /// Directory layout: frames/%05d.png, depth/%05d.f32, poses.json and
  /// index.json listing the time index of every record in order.
  void save(const std::filesystem::path& dir, const Intrinsics& K) const;
  static MemoryBank load(const std::filesystem::path& dir, Intrinsics* K = nullptr);

 private:
  std::vector<MemoryRecord> records_;
};

struct RetrievalResult {
  std::vector<int> indices;    // bank indices, best first
  std::vector<double> scores;  // max IoU over targets, per selected frame
  Eigen::MatrixXd iou;         // selected × target frames
  std::vector<int> assignments;  // 1-based target frame per selected frame
};

/// Scores every bank frame by its best IoU against the targets and keeps the
/// top `m`; equal scores prefer the more recent frame. Assignments are filled.
RetrievalResult retrieve_top_m(const MemoryBank& bank, const Trajectory& targets, const Intrinsics& K, int m,
                               const FrustumConfig& cfg = {});

/// k_j = argmax over target frames 2..N of IoU row j; ties go to the smaller
/// frame. Frame 1 is reserved for the reference image.
std::vector<int> assign_viewpoints(const RetrievalResult& result);

}  // namespace ucm
