#pragma once

#include "ucm/nn.hpp"
#include "ucm/pe_warp.hpp"

#include <json.hpp>

#include <memory>
#include <random>
#include <vector>

namespace ucm {

struct ModelConfig {
  int latent_dim = 192;  // codec channels per token
  int width = 128;
  int depth = 4;
  int heads = 8;
  int ffn_mult = 4;
  int grid_h = 8;
  int grid_w = 8;
  int patch = 8;          // pixels per token side
  int classes = 4;        // scene classes; id == classes is the null class
  int context_tokens = 4; // tokens per class embedding
  double rope_theta_time = 10.0;
  double rope_theta_space = 10.0;

  int head_dim() const { return width / heads; }
  int tokens_per_frame() const { return grid_h * grid_w; }
  int null_class() const { return classes; }
  RopeConfig rope() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Parameter names and shapes for a config, randomly initialized. Modulation
/// and output projections start at zero.
ParamStore<float> init_model_params(const ModelConfig& cfg, std::mt19937_64& rng);

/// One denoising problem: the noisy target latents plus the clean sources
/// (reference first, then memories) and their warped PEs.
struct ModelInput {
  RowMatrix<float> noisy;                 // N·P × D
  int frames = 0;                         // N
  double t = 0.0;                         // flow time, 0 = noise, 1 = data
  int class_id = 0;
  std::vector<RowMatrix<float>> sources;  // each P × D; index 0 is the reference
  std::vector<RowMatrix<float>> source_mask;  // each P × 1, visible fraction per token
  CondTokenSet cond;                      // entries reference sources by index
};

/// Per-input attention geometry shared by all blocks.
struct StreamLayout {
  int frames = 0;
  int tokens_per_frame = 0;
  int sources = 0;
  std::shared_ptr<const RopeTable> noisy_rope;
  std::shared_ptr<const RopeTable> clean_native_rope;
  std::shared_ptr<const RopeTable> entry_rope;
  std::vector<int> entry_rows;                      // clean-stream row of every entry token
  std::shared_ptr<const BlockMask> noisy_mask;      // noisy queries × [noisy | entries]
  std::shared_ptr<const BlockMask> clean_mask;      // per-source self attention
  std::shared_ptr<const BlockMask> noisy_context_mask;
  std::shared_ptr<const BlockMask> clean_context_mask;
};

StreamLayout build_stream_layout(const ModelInput& in, const ModelConfig& cfg);

template <typename T>
struct StreamIds {
  typename Tape<T>::Id noisy = -1;
  typename Tape<T>::Id clean = -1;
};

/// One block over both streams with shared weights. `mod` is the activated
/// timestep embedding (1 × width), `context` the class tokens.
template <typename T>
StreamIds<T> dit_block_forward(Tape<T>& tape, ParamStore<T>& params, int block, const StreamLayout& layout,
                               StreamIds<T> in, typename Tape<T>::Id mod, typename Tape<T>::Id context,
                               const ModelConfig& cfg, bool train = true);

template <typename T>
struct ForwardResult {
  typename Tape<T>::Id velocity = -1;  // N·P × D
  StreamIds<T> streams;                // after the last block
};

/// `train` records parameters as differentiable leaves; otherwise they enter
/// the tape as constants.
template <typename T>
ForwardResult<T> model_forward(Tape<T>& tape, ParamStore<T>& params, const ModelConfig& cfg, const ModelInput& in,
                               bool train);

/// Inference helper.
RowMatrix<float> predict_velocity(ParamStore<float>& params, const ModelConfig& cfg, const ModelInput& in);

/// Sinusoidal embedding of t·1000, width `dim`.
RowMatrix<double> timestep_embedding(double t, int dim);

}  // namespace ucm
