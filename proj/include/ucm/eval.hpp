#pragma once

#include "ucm/diffusion.hpp"
#include "ucm/geometry.hpp"
#include "ucm/image.hpp"
#include "ucm/memory.hpp"
#include "ucm/scene.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace ucm {

/// Mean geodesic angle in degrees between corresponding rotations. Callers
/// pass trajectories through normalize_relative first (see camera_errors).
/// Throws std::invalid_argument on a length mismatch or empty input.
double rot_err(const Trajectory& a, const Trajectory& b);
/// Mean Euclidean distance between corresponding translations.
double trans_err(const Trajectory& a, const Trajectory& b);

struct CameraErrors {
  double rot_err_deg = 0.0;
  double trans_err = 0.0;
};
/// rot_err and trans_err of the normalize_relative forms of both inputs.
CameraErrors camera_errors(const Trajectory& a, const Trajectory& b);

inline constexpr double kPsnrCap = 99.0;

/// 10·log10(1/MSE) over all channels, capped at kPsnrCap.
double psnr(const Image& a, const Image& b);
/// SSIM with an 11×11 Gaussian window (σ 1.5), K1 0.01, K2 0.03 and unit
/// dynamic range, averaged over all fully contained windows and channels.
/// Throws std::invalid_argument on size mismatch or images smaller than 11.
double ssim(const Image& a, const Image& b);

struct FrameMetric {
  int frame = 0;      // index of the evaluated frame
  int reference = 0;  // index of the frame it is compared against
  double psnr_db = 0.0;
  double ssim = 0.0;
  double rot_err_deg = 0.0;
  double trans_err = 0.0;
};

struct MetricReport {
  std::string protocol;
  double rot_err_deg = 0.0;
  double trans_err = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::vector<FrameMetric> frames;
  nlohmann::json metadata = nlohmann::json::object();

  /// Averages the per-frame series into the summary fields.
  void summarize();
  nlohmann::json to_json() const;
  void write_table(std::ostream& os) const;
  void write_csv(std::ostream& os) const;
  /// report.json, report.txt and frames.csv under `dir`.
  void save(const std::filesystem::path& dir) const;
};

/// Produces one frame per pose. poses[0] is the pose of `reference`, whose
/// image is output frame 0. `bank` holds the history and may be extended.
using Generator =
    std::function<std::vector<Image>(const ConditionFrame& reference, const Trajectory& poses, MemoryBank& bank)>;

/// Renders the scene at every requested pose. Ignores the bank.
Generator oracle_generator(const SceneSpec& scene, const Intrinsics& K);

struct ModelGeneratorConfig {
  int clip_frames = 9;  // video frames per generated clip
  int memories = 4;
  int class_id = 0;
  SamplerConfig sampler;
  uint64_t seed = 0;
};

/// Clip-by-clip rollout of a checkpoint. The trajectory is padded with its
/// last pose to a whole number of clips and the padding is dropped again.
Generator model_generator(Checkpoint& ckpt, const Codec& codec, const Intrinsics& K, const ModelGeneratorConfig& cfg,
                          DepthFn depth);

/// Number of history frames for a clip of `frames` frames: round(0.6·frames).
int history_length(int frames);

/// The first 60% of `clip` fills the bank; the rest is generated along the
/// ground-truth poses from the last history frame and compared with the
/// ground-truth frames. Camera metrics use the requested trajectory as the
/// achieved one.
MetricReport memory_init_protocol(const Generator& generator, const VideoClip& clip);

/// True if pose i equals pose L-1-i within `tol` for every i.
bool is_palindromic(const Trajectory& traj, double tol = 1e-9);

/// `path` followed by its reverse without repeating the turning pose.
Trajectory make_cycle(const Trajectory& path);

/// Generates the whole palindromic trajectory from `reference` with an empty
/// bank and compares frame i with frame L-1-i over the first half. Throws
/// std::invalid_argument unless the trajectory is palindromic and
/// reference.pose equals traj[0].
MetricReport cycle_protocol(const Generator& generator, const ConditionFrame& reference, const Trajectory& traj);

}  // namespace ucm
