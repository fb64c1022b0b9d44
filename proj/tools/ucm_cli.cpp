// Command-line front end: curate, train, generate, eval, inspect-retrieval
// and bench-attention.

#include "ucm/attention.hpp"
#include "ucm/checkpoint.hpp"
#include "ucm/config.hpp"
#include "ucm/curation.hpp"
#include "ucm/diffusion.hpp"
#include "ucm/eval.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace ucm;

namespace {

struct Globals {
  std::string config;
  std::optional<uint64_t> seed;
  std::vector<std::string> set;
  std::string out;
};

RunConfig load(const Globals& g) {
  std::vector<std::string> overrides = g.set;
  if (!g.out.empty()) overrides.push_back("output=" + g.out);
  return resolve_config(g.config.empty() ? std::nullopt : std::optional<fs::path>(g.config), overrides, g.seed);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << j.dump(2) << "\n";
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

void write_frames(const fs::path& dir, const std::vector<Image>& frames, const Trajectory& poses, const Intrinsics& K) {
  fs::create_directories(dir / "frames");
  char name[32];
  for (size_t i = 0; i < frames.size(); ++i) {
    std::snprintf(name, sizeof name, "%05zu.png", i);
    write_png(dir / "frames" / name, frames[i]);
  }
  write_pose_file(dir / "poses.json", {K, poses});
}

DepthFn scene_depth(const SceneSpec& scene, const Intrinsics& K) {
  return [scene, K](const CameraPose& p) {
    DepthMap d;
    render_view(scene, p, K, nullptr, &d);
    return d;
  };
}

Codec make_codec(const RunConfig& cfg) { return Codec(cfg.codec); }

Checkpoint load_model(const std::string& path, const RunConfig& cfg) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.codec.channels != cfg.codec.channels || ck.codec.spatial_stride != cfg.codec.spatial_stride ||
      ck.codec.temporal_stride != cfg.codec.temporal_stride || ck.codec.seed != cfg.codec.seed)
    throw std::runtime_error("checkpoint " + path + " was trained with a different codec configuration");
  return ck;
}

ModelGeneratorConfig generator_config(const RunConfig& cfg, int class_id) {
  ModelGeneratorConfig g;
  g.clip_frames = cfg.train.frames;
  g.memories = cfg.retrieval.memories;
  g.class_id = class_id;
  g.sampler = cfg.sampler;
  g.seed = stream_seed(cfg.seed, SeedStream::sampling);
  return g;
}

int cmd_curate(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const DatasetSummary s = generate_synthetic_dataset(cfg.dataset_config(), cfg.dataset);
  write_json(cfg.dataset / "config.json", to_json_doc(cfg));
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  std::printf("curated %d scenes, %d clips, %d frames, %d revisit samples into %s (%.1f s)\n", s.scenes, s.clips,
              s.frames, s.samples, cfg.dataset.string().c_str(), dt.count());
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  std::vector<VideoClip> clips;
  for (const auto& dir : list_clips(cfg.dataset)) clips.push_back(load_clip(dir));
  if (clips.empty()) throw std::runtime_error("no clips under " + cfg.dataset.string());
  TrainConfig tc = cfg.train;
  if (tc.checkpoint_every > 0) tc.checkpoint_dir = cfg.output / "checkpoints";
  std::printf("training on %zu clips for %d steps (batch %d)\n", clips.size(), tc.steps, tc.batch);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(tc, cfg.model, cfg.codec, clips, stream_seed(cfg.seed, SeedStream::init),
                              stream_seed(cfg.seed, SeedStream::training), [&](int step, double loss, double lr) {
                                if (step % 50 == 0 || step + 1 == tc.steps) {
                                  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
                                  std::printf("step %5d  loss %.5f  lr %.2e  %.0f s\n", step, loss, lr, dt.count());
                                  std::fflush(stdout);
                                }
                              });
  fs::create_directories(cfg.output);
  save_checkpoint(cfg.output / "model.ucmc", r.checkpoint);
  std::ofstream csv(cfg.output / "loss.csv");
  csv << "step,loss,grad_norm\n";
  for (size_t i = 0; i < r.loss.size(); ++i) csv << i << ',' << r.loss[i] << ',' << r.grad_norm[i] << '\n';
  write_json(cfg.output / "config.json", to_json_doc(cfg));
  std::printf("wrote %s\n", (cfg.output / "model.ucmc").string().c_str());
  return 0;
}

struct GenerateArgs {
  std::string checkpoint;
  std::string clip;
  int frame = 0;
  std::string trajectory;
  int clips = 1;
  bool oracle_velocity = false;
};

int cmd_generate(const RunConfig& cfg, const GenerateArgs& a) {
  const VideoClip clip = load_clip(a.clip);
  if (a.frame < 0 || a.frame >= static_cast<int>(clip.size()))
    throw std::invalid_argument("--frame " + std::to_string(a.frame) + " is outside clip " + a.clip);
  const ConditionFrame reference{clip.frames[a.frame], clip.depth[a.frame], clip.poses[a.frame], {}};
  const Codec codec = make_codec(cfg);
  const int t = cfg.train.frames;

  Trajectory poses;
  if (!a.trajectory.empty()) {
    if (a.oracle_velocity) throw std::invalid_argument("--oracle-velocity needs the clip's own trajectory");
    poses = read_pose_file(a.trajectory).poses;
  } else {
    const int need = a.clips * (t - 1) + 1;
    if (a.frame + need > static_cast<int>(clip.size()))
      throw std::invalid_argument("clip " + a.clip + " has too few frames after --frame for " +
                                  std::to_string(a.clips) + " clips of " + std::to_string(t));
    poses.assign(clip.poses.begin() + a.frame, clip.poses.begin() + a.frame + need);
  }

  if (a.oracle_velocity) {
    if (a.clips != 1) throw std::invalid_argument("--oracle-velocity generates a single clip");
    std::vector<Image> truth(clip.frames.begin() + a.frame, clip.frames.begin() + a.frame + t);
    for (auto& f : truth) f = to_signed(f);
    const LatentClip x1 = codec.encode(truth);
    const RowMatrix<double> target = x1.tokens().cast<double>();
    const VelocityField oracle = [&](const RowMatrix<double>& x, double time, bool) {
      return RowMatrix<double>((target - x) / (1.0 - time));
    };
    Checkpoint ck;
    if (!a.checkpoint.empty()) {
      ck = load_model(a.checkpoint, cfg);
    } else {
      ck.model = cfg.model;
      std::mt19937_64 rng(stream_seed(cfg.seed, SeedStream::init));
      ck.params = init_model_params(cfg.model, rng);
    }
    const GeneratedClip g = sample_clip(ck, codec, clip.K, reference, poses, {}, clip.class_id, cfg.sampler,
                                        stream_seed(cfg.seed, SeedStream::sampling), nullptr, {}, &oracle);
    double max_err = 0.0;
    for (size_t i = 0; i < x1.data.size(); ++i)
      max_err = std::max(max_err, static_cast<double>(std::abs(g.latent.data[i] - x1.data[i])));
    write_frames(cfg.output, g.frames, poses, clip.K);
    write_json(cfg.output / "generation.json",
               {{"mode", "oracle_velocity"}, {"steps", cfg.sampler.steps}, {"max_abs_latent_error", max_err}});
    std::printf("oracle velocity, %d step(s): max |x - x1| = %.3g%s\n", cfg.sampler.steps, max_err,
                max_err == 0.0 ? " (exact reconstruction)" : "");
    return 0;
  }

  if (a.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  Checkpoint ck = load_model(a.checkpoint, cfg);
  const SceneSpec scene = load_scene(fs::path(a.clip).parent_path());
  const int step = t - 1;
  const int clips = a.trajectory.empty() ? a.clips : std::max(1, (static_cast<int>(poses.size()) - 1 + step - 1) / step);
  Trajectory padded = poses;
  padded.resize(static_cast<size_t>(clips) * step + 1, poses.back());
  MemoryBank bank;
  RolloutResult r = rollout(ck, codec, clip.K, reference, padded, clips, cfg.retrieval.memories, clip.class_id,
                            cfg.sampler, stream_seed(cfg.seed, SeedStream::sampling), bank, scene_depth(scene, clip.K));
  r.frames.resize(poses.size());
  write_frames(cfg.output, r.frames, poses, clip.K);
  write_json(cfg.output / "generation.json",
             {{"mode", "model"}, {"clips", clips}, {"memories", cfg.retrieval.memories}, {"retrieved", r.retrieved}});
  std::printf("generated %zu frames in %d clip(s) into %s\n", r.frames.size(), clips, cfg.output.string().c_str());
  return 0;
}

struct EvalArgs {
  std::string protocol;
  std::string checkpoint;
  std::string clip;
  bool oracle = false;
  int half = 0;
};

int cmd_eval(const RunConfig& cfg, const EvalArgs& a) {
  const VideoClip clip = load_clip(a.clip);
  const SceneSpec scene = load_scene(fs::path(a.clip).parent_path());
  const Codec codec = make_codec(cfg);
  Checkpoint ck;
  Generator gen;
  if (a.oracle) {
    gen = oracle_generator(scene, clip.K);
  } else {
    if (a.checkpoint.empty()) throw std::invalid_argument("eval needs --checkpoint or --oracle");
    ck = load_model(a.checkpoint, cfg);
    gen = model_generator(ck, codec, clip.K, generator_config(cfg, clip.class_id), scene_depth(scene, clip.K));
  }
  MetricReport report;
  if (a.protocol == "memory-init") {
    report = memory_init_protocol(gen, clip);
  } else {
    const int half = a.half > 0 ? a.half : cfg.train.frames;
    if (half > static_cast<int>(clip.size()))
      throw std::invalid_argument("--half " + std::to_string(half) + " exceeds the clip length");
    const Trajectory cycle = make_cycle(Trajectory(clip.poses.begin(), clip.poses.begin() + half));
    report = cycle_protocol(gen, {clip.frames[0], clip.depth[0], clip.poses[0], {}}, cycle);
  }
  report.metadata["generator"] = a.oracle ? "oracle" : "model";
  report.metadata["clip"] = a.clip;
  if (!a.oracle) report.metadata["memories"] = cfg.retrieval.memories;
  report.save(cfg.output);
  report.write_table(std::cout);
  return 0;
}

int cmd_inspect_retrieval(const RunConfig& cfg, const std::string& clip_dir, int split) {
  const VideoClip clip = load_clip(clip_dir);
  const int history = split > 0 ? split : history_length(static_cast<int>(clip.size()));
  const int t = cfg.train.frames;
  if (history < 1 || history - 1 + t > static_cast<int>(clip.size()))
    throw std::invalid_argument("--split " + std::to_string(history) + " leaves no room for a clip of " +
                                std::to_string(t) + " frames");
  MemoryBank bank;
  for (int i = 0; i < history; ++i) bank.append({clip.frames[i], clip.depth[i], clip.poses[i], i});
  const Trajectory targets = pool_trajectory(
      Trajectory(clip.poses.begin() + history - 1, clip.poses.begin() + history - 1 + t), cfg.codec.temporal_stride);
  const RetrievalResult r = retrieve_top_m(bank, targets, clip.K, cfg.retrieval.memories, cfg.retrieval.frustum);
  nlohmann::json out = {{"bank", history}, {"targets", targets.size()}, {"selected", nlohmann::json::array()}};
  std::printf("%6s %6s %8s %6s\n", "rank", "frame", "iou", "slot");
  for (size_t j = 0; j < r.indices.size(); ++j) {
    const auto& rec = bank[r.indices[j]];
    std::printf("%6zu %6ld %8.4f %6d\n", j, rec.time, r.scores[j], r.assignments[j]);
    out["selected"].push_back({{"frame", rec.time}, {"iou", r.scores[j]}, {"assignment", r.assignments[j]}});
  }
  write_json(cfg.output / "retrieval.json", out);
  return 0;
}

struct BenchArgs {
  int frames = 4;
  int memories = 20;
  int grid = 8;
  int repeats = 3;
};

int cmd_bench_attention(const RunConfig& cfg, const BenchArgs& a) {
  const AttentionBenchmark b = benchmark_attention(a.frames, a.memories, a.grid, cfg.model.width, cfg.model.heads,
                                                   a.repeats, stream_seed(cfg.seed, SeedStream::sampling));
  std::printf("N=%d M=%d tokens/frame=%d width=%d heads=%d\n", b.frames, b.memories, b.tokens_per_frame, b.width,
              b.heads);
  std::printf("true blocks: sparse %zu, dense %zu\n", b.sparse_blocks, b.dense_blocks);
  std::printf("sparse %.4f s, dense %.4f s, speedup %.2fx\n", b.sparse_seconds, b.dense_seconds, b.speedup());
  write_json(cfg.output / "bench_attention.json", {{"frames", b.frames},
                                                   {"memories", b.memories},
                                                   {"tokens_per_frame", b.tokens_per_frame},
                                                   {"sparse_blocks", b.sparse_blocks},
                                                   {"dense_blocks", b.dense_blocks},
                                                   {"sparse_seconds", b.sparse_seconds},
                                                   {"dense_seconds", b.dense_seconds}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-scene world model with geometry-indexed memory"};
  app.require_subcommand(1);
  Globals g;
  auto add_globals = [&](CLI::App* c) {
    c->add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
    c->add_option("--seed", g.seed, "Root seed for all random streams");
    c->add_option("--set", g.set, "Override a config value, KEY=VALUE with dotted keys (repeatable)");
    c->add_option("--out", g.out, "Output directory");
  };

  auto* curate = app.add_subcommand("curate", "Render the synthetic dataset and revisit samples");
  add_globals(curate);

  auto* train_cmd = app.add_subcommand("train", "Train the model on the dataset");
  add_globals(train_cmd);

  GenerateArgs ga;
  auto* generate = app.add_subcommand("generate", "Generate frames along a trajectory");
  add_globals(generate);
  generate->add_option("--checkpoint", ga.checkpoint, "Model checkpoint");
  generate->add_option("--clip", ga.clip, "Dataset clip providing the reference frame")->required();
  generate->add_option("--frame", ga.frame, "Reference frame index in the clip");
  generate->add_option("--trajectory", ga.trajectory, "Pose file to follow instead of the clip's poses");
  generate->add_option("--clips", ga.clips, "Number of clips when following the clip's poses")->check(CLI::PositiveNumber);
  generate->add_flag("--oracle-velocity", ga.oracle_velocity, "Sample with the exact velocity toward the clip latents");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Run an evaluation protocol");
  add_globals(eval);
  eval->add_option("--protocol", ea.protocol, "cycle or memory-init")
      ->required()
      ->check(CLI::IsMember({"cycle", "memory-init"}));
  eval->add_option("--checkpoint", ea.checkpoint, "Model checkpoint");
  eval->add_option("--clip", ea.clip, "Dataset clip")->required();
  eval->add_flag("--oracle", ea.oracle, "Use the ground-truth renderer as the generator");
  eval->add_option("--half", ea.half, "Cycle: poses before the turn (default train.frames)");

  std::string rclip;
  int split = 0;
  auto* inspect = app.add_subcommand("inspect-retrieval", "Show the memory frames retrieved for a clip");
  add_globals(inspect);
  inspect->add_option("--clip", rclip, "Dataset clip")->required();
  inspect->add_option("--split", split, "History length (default 60% of the clip)");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench-attention", "Time block-sparse against full attention");
  add_globals(bench);
  bench->add_option("--frames", ba.frames, "Generated latent frames N");
  bench->add_option("--memories", ba.memories, "Memory frames M");
  bench->add_option("--grid", ba.grid, "Token grid side");
  bench->add_option("--repeats", ba.repeats, "Timing repeats");

  CLI11_PARSE(app, argc, argv);
  try {
    const RunConfig cfg = load(g);
    if (*curate) return cmd_curate(cfg);
    if (*train_cmd) return cmd_train(cfg);
    if (*generate) return cmd_generate(cfg, ga);
    if (*eval) return cmd_eval(cfg, ea);
    if (*inspect) return cmd_inspect_retrieval(cfg, rclip, split);
    if (*bench) return cmd_bench_attention(cfg, ba);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
