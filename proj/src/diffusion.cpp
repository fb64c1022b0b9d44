#include "ucm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ucm {

namespace {

uint64_t mix(uint64_t seed, uint64_t k) {
  uint64_t x = seed ^ (k + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

RowMatrix<float> gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  RowMatrix<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Signed image with hidden pixels set to 0 (mid gray).
Image masked_signed(const ConditionFrame& f) {
  Image s = to_signed(f.image);
  if (f.mask.bits.empty()) return s;
  for (int y = 0; y < s.height(); ++y)
    for (int x = 0; x < s.width(); ++x)
      if (!f.mask.at(x, y)) s.set_pixel(x, y, Eigen::Vector3f::Zero());
  return s;
}

}  // namespace

Image to_signed(const Image& image) {
  Image out = image;
  for (float& v : out.data()) v = 2.0f * v - 1.0f;
  return out;
}

Image from_signed(const Image& image) {
  Image out = image;
  for (float& v : out.data()) v = std::clamp(0.5f * (v + 1.0f), 0.0f, 1.0f);
  return out;
}

RowMatrix<float> forward_process(const RowMatrix<float>& x0, const RowMatrix<float>& x1, double t) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols()) throw std::invalid_argument("forward_process: shape mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("forward_process: t must lie in [0, 1]");
  if (t == 0.0) return x0;
  if (t == 1.0) return x1;
  const float tf = static_cast<float>(t);
  return tf * x1 + (1.0f - tf) * x0;
}

DiffusionState DiffusionState::make(RowMatrix<float> x0, RowMatrix<float> x1, double t) {
  DiffusionState s;
  s.xt = forward_process(x0, x1, t);
  s.vt = x1 - x0;
  s.x0 = std::move(x0);
  s.x1 = std::move(x1);
  s.t = t;
  return s;
}

RowMatrix<float> token_visibility(const Mask& mask, int patch) {
  if (mask.width % patch != 0 || mask.height % patch != 0)
    throw std::invalid_argument("token_visibility: mask size not divisible by the patch");
  const int gw = mask.width / patch, gh = mask.height / patch;
  RowMatrix<float> out(gh * gw, 1);
  for (int ty = 0; ty < gh; ++ty)
    for (int tx = 0; tx < gw; ++tx) {
      int n = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x) n += mask.at(tx * patch + x, ty * patch + y);
      out(ty * gw + tx, 0) = static_cast<float>(n) / static_cast<float>(patch * patch);
    }
  return out;
}

ModelInput build_conditioning(const Codec& codec, const ModelConfig& cfg, const Intrinsics& K,
                              const ConditionRequest& req, std::vector<int>* assignments) {
  const int s = codec.config().spatial_stride;
  if (s != cfg.patch) throw std::invalid_argument("conditioning: codec stride and model patch differ");
  if (K.width != cfg.grid_w * s || K.height != cfg.grid_h * s)
    throw std::invalid_argument("conditioning: image size does not match the model grid");
  if (req.poses.empty()) throw std::invalid_argument("conditioning: no target poses");
  const Trajectory pooled = pool_trajectory(req.poses, codec.config().temporal_stride);
  const int n = static_cast<int>(pooled.size());

  std::vector<WarpMaps> ref_warps;
  for (const auto& p : pooled) ref_warps.push_back(compute_warp_maps(req.reference.depth, req.reference.pose, p, K));

  const int m = static_cast<int>(req.memories.size());
  std::vector<int> assign(m, 1);
  if (n >= 2 && m > 0) {
    RetrievalResult rr;
    rr.iou.resize(m, n);
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < n; ++i) rr.iou(j, i) = frustum_iou(req.memories[j].pose, pooled[i], K);
    assign = assign_viewpoints(rr);
  }
  std::vector<LatentClip> mem_latents;
  std::vector<WarpMaps> mem_warps;
  ModelInput in;
  in.frames = n;
  in.class_id = req.class_id;
  const LatentClip ref = codec.encode_frame(masked_signed(req.reference));
  in.sources.push_back(ref.tokens());
  in.source_mask.push_back(req.reference.mask.bits.empty() ? RowMatrix<float>::Ones(ref.token_count(), 1)
                                                           : token_visibility(req.reference.mask, s));
  for (int j = 0; j < m; ++j) {
    const ConditionFrame& f = req.memories[j];
    mem_latents.push_back(codec.encode_frame(masked_signed(f)));
    mem_warps.push_back(compute_warp_maps(f.depth, f.pose, pooled[assign[j] - 1], K));
    in.sources.push_back(mem_latents.back().tokens());
    in.source_mask.push_back(f.mask.bits.empty() ? RowMatrix<float>::Ones(ref.token_count(), 1)
                                                 : token_visibility(f.mask, s));
  }
  in.cond = assemble_condition_set(ref, mem_latents, ref_warps, mem_warps, assign, cfg.rope().levels);
  if (assignments) *assignments = assign;
  return in;
}

double flow_loss(ParamStore<float>& params, const ModelConfig& cfg, const std::vector<FlowItem>& items,
                 bool accumulate) {
  if (items.empty()) throw std::invalid_argument("flow_loss: empty batch");
  double total = 0.0;
  const float weight = 1.0f / static_cast<float>(items.size());
  for (size_t b = 0; b < items.size(); ++b) {
    Tape<float> tape;
    const auto fwd = model_forward(tape, params, cfg, items[b].input, accumulate);
    const int loss = tape.mse(fwd.velocity, items[b].target);
    const double value = tape.value(loss)(0, 0);
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite loss for batch item " << b << " (t=" << items[b].input.t
          << ", memories=" << items[b].input.cond.memory_count << ")";
      throw std::runtime_error(msg.str());
    }
    total += value;
    if (accumulate) tape.backward(tape.scale(loss, weight));
  }
  return total / static_cast<double>(items.size());
}

void TrainConfig::validate() const {
  if (steps < 0 || batch < 1 || frames < 2 || max_memories < 0)
    throw std::invalid_argument("train: steps >= 0, batch >= 1, frames >= 2 and max_memories >= 0 required");
  if (!(lr > 0.0) || warmup < 0 || !(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0))
    throw std::invalid_argument("train: invalid learning-rate schedule");
  if (!(class_drop >= 0.0 && class_drop <= 1.0)) throw std::invalid_argument("train: class_drop must be in [0, 1]");
  if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
  offsets.validate();
}

double TrainConfig::lr_at(int step) const {
  if (step < warmup) return lr * (step + 1) / static_cast<double>(warmup);
  const int span = std::max(1, steps - warmup);
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return lr * (final_lr_fraction + (1.0 - final_lr_fraction) * cosine);
}

FlowItem make_training_item(const Codec& codec, const ModelConfig& cfg, const TrainConfig& tc, const VideoClip& clip,
                            std::mt19937_64& rng) {
  const int total = clip.size();
  if (total < tc.frames) throw std::invalid_argument("train: clip shorter than the training window");
  const int w = std::uniform_int_distribution<int>(0, total - tc.frames)(rng);

  ConditionRequest req;
  req.reference = {clip.frames[w], clip.depth[w], clip.poses[w], {}};
  req.poses.assign(clip.poses.begin() + w, clip.poses.begin() + w + tc.frames);
  req.class_id = clip.class_id;

  const int m = std::uniform_int_distribution<int>(0, tc.max_memories)(rng);
  for (int j = 0; j < m; ++j) {
    // A revisit of a target frame other than the first, rendered from a
    // nearby frame of the clip.
    const int k = std::uniform_int_distribution<int>(w + 1, w + tc.frames - 1)(rng);
    const int lo = std::max(-tc.offsets.shift_max, k - (total - 1)), hi = std::min(tc.offsets.shift_max, k);
    const int shift = std::uniform_int_distribution<int>(lo, hi)(rng);
    const CameraPose offset = sample_offset(rng, tc.offsets);
    CurationSample s = make_revisit_sample(clip, k - shift, offset, shift);
    req.memories.push_back({std::move(s.image), std::move(s.zbuffer), s.render_pose, std::move(s.mask)});
  }
  if (std::bernoulli_distribution(tc.class_drop)(rng)) req.class_id = cfg.null_class();

  FlowItem item;
  item.input = build_conditioning(codec, cfg, clip.K, req);
  std::vector<Image> window;
  for (int i = w; i < w + tc.frames; ++i) window.push_back(to_signed(clip.frames[i]));
  const LatentClip x1 = codec.encode(window);
  const RowMatrix<float> x0 = gaussian(rng, x1.token_count(), x1.channels);
  const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  DiffusionState st = DiffusionState::make(x0, x1.tokens(), t);
  item.input.noisy = std::move(st.xt);
  item.input.t = t;
  item.target = std::move(st.vt);
  return item;
}

TrainResult train(const TrainConfig& tc, const ModelConfig& cfg, const CodecConfig& codec_cfg,
                  const std::vector<VideoClip>& clips, uint64_t init_seed, uint64_t train_seed,
                  const TrainCallback& callback) {
  tc.validate();
  cfg.validate();
  if (clips.empty()) throw std::invalid_argument("train: no clips");
  tune_allocator();
  const Codec codec(codec_cfg);
  TrainResult result;
  result.checkpoint.model = cfg;
  result.checkpoint.codec = codec_cfg;
  std::mt19937_64 init_rng(init_seed);
  result.checkpoint.params = init_model_params(cfg, init_rng);
  ParamStore<float>& params = result.checkpoint.params;

  AdamWConfig oc;
  oc.lr = tc.lr;
  oc.weight_decay = tc.weight_decay;
  oc.grad_clip = tc.grad_clip;
  AdamW opt(oc);
  std::mt19937_64 rng(train_seed);
  std::uniform_int_distribution<size_t> pick(0, clips.size() - 1);
  for (int step = 0; step < tc.steps; ++step) {
    std::vector<FlowItem> batch;
    for (int b = 0; b < tc.batch; ++b) batch.push_back(make_training_item(codec, cfg, tc, clips[pick(rng)], rng));
    params.zero_grad();
    const double loss = flow_loss(params, cfg, batch, true);
    const double lr = tc.lr_at(step);
    result.grad_norm.push_back(opt.step(params, lr));
    result.loss.push_back(loss);
    result.checkpoint.step = step + 1;
    if (callback) callback(step, loss, lr);
    if (tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06d.ucmc", step + 1);
      save_checkpoint(tc.checkpoint_dir / name, result.checkpoint);
    }
  }
  return result;
}

RowMatrix<double> euler_sample(const RowMatrix<double>& x0, const SamplerConfig& sc, const VelocityField& field) {
  if (sc.steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
  RowMatrix<double> x = x0;
  const double dt = 1.0 / sc.steps;
  for (int k = 0; k < sc.steps; ++k) {
    const double t = k * dt;
    RowMatrix<double> v = field(x, t, true);
    if (sc.cfg_scale != 1.0) {
      const RowMatrix<double> vn = field(x, t, false);
      v = vn + sc.cfg_scale * (v - vn);
    }
    x += dt * v;
  }
  return x;
}

VelocityField model_velocity(ParamStore<float>& params, const ModelConfig& cfg, const ModelInput& conditioning) {
  return [&params, &cfg, conditioning](const RowMatrix<double>& x, double t, bool conditional) {
    ModelInput in = conditioning;
    in.noisy = x.cast<float>();
    in.t = t;
    if (!conditional) in.class_id = cfg.null_class();
    return RowMatrix<double>(predict_velocity(params, cfg, in).cast<double>());
  };
}

GeneratedClip sample_clip(Checkpoint& ckpt, const Codec& codec, const Intrinsics& K, const ConditionFrame& reference,
                          const Trajectory& poses, const std::vector<ConditionFrame>& memories, int class_id,
                          const SamplerConfig& sc, uint64_t seed, MemoryBank* bank, const DepthFn& depth,
                          const VelocityField* field) {
  if (sc.steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
  ConditionRequest req{reference, poses, memories, class_id};
  GeneratedClip out;
  const ModelInput cond = build_conditioning(codec, ckpt.model, K, req, &out.assignments);
  const int tpf = ckpt.model.tokens_per_frame();
  std::mt19937_64 rng(seed);
  const RowMatrix<double> x0 =
      gaussian(rng, static_cast<Eigen::Index>(cond.frames) * tpf, ckpt.model.latent_dim).cast<double>();
  const RowMatrix<double> x1 =
      euler_sample(x0, sc, field ? *field : model_velocity(ckpt.params, ckpt.model, cond));
  out.latent = LatentClip(cond.frames, ckpt.model.grid_h, ckpt.model.grid_w, ckpt.model.latent_dim);
  out.latent.tokens() = x1.cast<float>();
  for (const Image& f : codec.decode(out.latent)) out.frames.push_back(from_signed(f));
  out.poses = poses;
  if (bank) {
    if (!depth) throw std::invalid_argument("sample_clip: appending to a bank needs a depth provider");
    long time = bank->empty() ? 0 : bank->records().back().time + 1;
    for (const auto& [begin, end] : latent_frame_groups(static_cast<int>(poses.size()), codec.config().temporal_stride)) {
      (void)end;
      bank->append({out.frames[begin], depth(poses[begin]), poses[begin], time++});
    }
  }
  return out;
}

std::vector<ConditionFrame> retrieve_memories(const MemoryBank& bank, const Trajectory& pooled, const Intrinsics& K,
                                              int m, RetrievalResult* result) {
  std::vector<ConditionFrame> out;
  if (bank.empty() || m <= 0) return out;
  const RetrievalResult rr = retrieve_top_m(bank, pooled, K, m);
  for (int j : rr.indices) out.push_back({bank[j].image, bank[j].depth, bank[j].pose, {}});
  if (result) *result = rr;
  return out;
}

RolloutResult rollout(Checkpoint& ckpt, const Codec& codec, const Intrinsics& K, const ConditionFrame& reference,
                      const Trajectory& poses, int clips, int memories, int class_id, const SamplerConfig& sc,
                      uint64_t seed, MemoryBank& bank, const DepthFn& depth) {
  if (clips < 1) throw std::invalid_argument("rollout: clips must be >= 1");
  const int total = static_cast<int>(poses.size());
  if ((total - 1) % clips != 0 || total < 2 * clips + 1)
    throw std::invalid_argument("rollout: trajectory length must be clips*(T-1)+1 with T >= 3");
  const int t = (total - 1) / clips + 1;
  RolloutResult out;
  ConditionFrame ref = reference;
  for (int c = 0; c < clips; ++c) {
    const Trajectory clip_poses(poses.begin() + c * (t - 1), poses.begin() + c * (t - 1) + t);
    RetrievalResult rr;
    const auto mems =
        retrieve_memories(bank, pool_trajectory(clip_poses, codec.config().temporal_stride), K, memories, &rr);
    out.retrieved.push_back(rr.indices);
    out.references.push_back(ref.image);
    GeneratedClip g;
    try {
      g = sample_clip(ckpt, codec, K, ref, clip_poses, mems, class_id, sc, c == 0 ? seed : mix(seed, static_cast<uint64_t>(c)),
                      &bank, depth);
    } catch (const std::exception& e) {
      throw std::runtime_error("rollout clip " + std::to_string(c) + ": " + e.what());
    }
    for (int i = c == 0 ? 0 : 1; i < t; ++i) {
      out.frames.push_back(g.frames[i]);
      out.poses.push_back(clip_poses[i]);
    }
    ref = {g.frames.back(), depth(clip_poses.back()), clip_poses.back(), {}};
  }
  return out;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace ucm
