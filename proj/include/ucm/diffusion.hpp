#pragma once

#include "ucm/checkpoint.hpp"
#include "ucm/codec.hpp"
#include "ucm/curation.hpp"
#include "ucm/memory.hpp"
#include "ucm/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

namespace ucm {

/// Pixels in [0, 1] to the codec's signed range [-1, 1] and back (clamped).
Image to_signed(const Image& image);
Image from_signed(const Image& image);

/// t·x1 + (1 - t)·x0. Throws std::invalid_argument on shape mismatch or t
/// outside [0, 1].
RowMatrix<float> forward_process(const RowMatrix<float>& x0, const RowMatrix<float>& x1, double t);

struct DiffusionState {
  RowMatrix<float> x0;  // noise
  RowMatrix<float> x1;  // data
  double t = 0.0;
  RowMatrix<float> xt;
  RowMatrix<float> vt;  // x1 - x0

  static DiffusionState make(RowMatrix<float> x0, RowMatrix<float> x1, double t);
};

/// A frame used as conditioning. An empty mask means fully visible.
struct ConditionFrame {
  Image image;
  DepthMap depth;
  CameraPose pose;
  Mask mask;
};

struct ConditionRequest {
  ConditionFrame reference;
  Trajectory poses;  // video-rate target poses, pooled to latent rate internally
  std::vector<ConditionFrame> memories;
  int class_id = 0;
};

/// Encodes the reference and memories, warps their PEs into the pooled
/// target poses and assigns each memory to its best-overlapping target frame
/// (frames 2..N). The returned input has no noisy tokens yet.
ModelInput build_conditioning(const Codec& codec, const ModelConfig& cfg, const Intrinsics& K,
                              const ConditionRequest& req, std::vector<int>* assignments = nullptr);

/// Fraction of visible pixels under every token (P × 1).
RowMatrix<float> token_visibility(const Mask& mask, int patch);

struct FlowItem {
  ModelInput input;         // noisy = x_t, t set
  RowMatrix<float> target;  // v_t
};

/// Mean over items of the per-item velocity MSE. With `accumulate`, adds the
/// gradient of that mean to the parameter grads. Throws std::runtime_error
/// on a non-finite loss.
double flow_loss(ParamStore<float>& params, const ModelConfig& cfg, const std::vector<FlowItem>& items,
                 bool accumulate);

struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  int frames = 9;        // video frames per training window
  int max_memories = 4;  // M drawn uniformly from [0, max_memories]
  double lr = 1e-3;
  int warmup = 100;
  double final_lr_fraction = 0.1;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double class_drop = 0.1;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;
  OffsetDistribution offsets;

  void validate() const;
  /// Linear warmup, then cosine decay to lr·final_lr_fraction.
  double lr_at(int step) const;
};

/// One training example: a window of `frames` frames from `clip`, its first
/// frame as the reference, and revisit renders as memories.
FlowItem make_training_item(const Codec& codec, const ModelConfig& cfg, const TrainConfig& tc, const VideoClip& clip,
                            std::mt19937_64& rng);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss;  // per step, batch mean
  std::vector<double> grad_norm;
};

using TrainCallback = std::function<void(int step, double loss, double lr)>;

/// Deterministic given the two seeds. Checkpoints go to
/// checkpoint_dir/step_%06d.ucmc.
TrainResult train(const TrainConfig& tc, const ModelConfig& cfg, const CodecConfig& codec_cfg,
                  const std::vector<VideoClip>& clips, uint64_t init_seed, uint64_t train_seed,
                  const TrainCallback& callback = {});

struct SamplerConfig {
  int steps = 50;
  double cfg_scale = 1.5;
};

/// Velocity at (x, t); `conditional` false selects the null class.
using VelocityField = std::function<RowMatrix<double>(const RowMatrix<double>& x, double t, bool conditional)>;

/// Euler integration from t = 0 to 1 with v = v_null + g·(v_cond - v_null).
/// g = 1 uses the conditional velocity alone. Throws on steps < 1.
RowMatrix<double> euler_sample(const RowMatrix<double>& x0, const SamplerConfig& sc, const VelocityField& field);

/// Velocity field of the model for a fixed conditioning.
VelocityField model_velocity(ParamStore<float>& params, const ModelConfig& cfg, const ModelInput& conditioning);

/// Depth for an arbitrary camera pose, used for generated frames.
using DepthFn = std::function<DepthMap(const CameraPose&)>;

struct GeneratedClip {
  std::vector<Image> frames;  // video rate, [0, 1]
  Trajectory poses;
  LatentClip latent;
  std::vector<int> assignments;
};

/// Generates one clip along `poses` from Gaussian noise drawn with `seed`.
/// `field` overrides the model velocity when set. When `bank` is given, the
/// first frame of every latent group is appended with depth from `depth`.
GeneratedClip sample_clip(Checkpoint& ckpt, const Codec& codec, const Intrinsics& K, const ConditionFrame& reference,
                          const Trajectory& poses, const std::vector<ConditionFrame>& memories, int class_id,
                          const SamplerConfig& sc, uint64_t seed, MemoryBank* bank = nullptr,
                          const DepthFn& depth = {}, const VelocityField* field = nullptr);

/// Top-m bank frames for the pooled `poses`, as conditioning frames.
std::vector<ConditionFrame> retrieve_memories(const MemoryBank& bank, const Trajectory& pooled, const Intrinsics& K,
                                              int m, RetrievalResult* result = nullptr);

struct RolloutResult {
  std::vector<Image> frames;  // clips·(T-1)+1
  Trajectory poses;
  std::vector<std::vector<int>> retrieved;  // bank indices per clip
  std::vector<Image> references;           // conditioning frame per clip
};

/// Clip-by-clip generation. Clip k+1 is conditioned on the last frame of
/// clip k and on the top `memories` bank frames for its poses. Clip 0 uses
/// `seed` as is, so one clip reproduces sample_clip.
RolloutResult rollout(Checkpoint& ckpt, const Codec& codec, const Intrinsics& K, const ConditionFrame& reference,
                      const Trajectory& poses, int clips, int memories, int class_id, const SamplerConfig& sc,
                      uint64_t seed, MemoryBank& bank, const DepthFn& depth);

/// Raises glibc's mmap and trim thresholds so the per-step tensors are reused
/// instead of being mapped and faulted in again. No-op elsewhere.
void tune_allocator();

}  // namespace ucm
