// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failures (capped at 1).

#include "test_util.hpp"
#include "ucm/attention.hpp"
#include "ucm/checkpoint.hpp"
#include "ucm/codec.hpp"
#include "ucm/curation.hpp"
#include "ucm/diffusion.hpp"
#include "ucm/eval.hpp"
#include "ucm/memory.hpp"
#include "ucm/pe_warp.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace ucm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Seeds for the toy training run and its evaluation.
constexpr uint64_t kDataSeed = 2024;
constexpr uint64_t kInitSeed = 11;
constexpr uint64_t kTrainSeed = 12;
constexpr uint64_t kSampleSeed = 13;
constexpr int kTrainScenes = 4;
constexpr int kHeldOutScenes = 4;

DatasetConfig toy_dataset() {
  DatasetConfig d;
  d.seed = kDataSeed;
  d.scenes = kTrainScenes;
  d.clips_per_scene = 2;
  d.frames = 33;
  d.width = d.height = 64;
  return d;
}

TrainConfig toy_training() {
  TrainConfig tc;
  tc.steps = 2000;
  tc.batch = 4;
  tc.frames = 9;
  return tc;
}

// 1. project(lift(p)) = p.
Outcome geometry_round_trip() {
  const auto t0 = Clock::now();
  const Intrinsics K = Intrinsics::from_fov(40, 25, 70.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> depth(0.2f, 50.0f);
  double worst = 0.0;
  size_t count = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const CameraPose pose = testing::random_pose(rng, 5.0);
    DepthMap d(K.width, K.height);
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x) d.set(x, y, depth(rng));
    const PointCloud pc = lift_depth(d, pose, K);
    const auto proj = project_points(pc, pose, K);
    for (size_t i = 0; i < pc.size(); ++i) {
      const int x = pc.pixel[i] % K.width, y = pc.pixel[i] / K.width;
      if (!proj[i].valid) return {false, "lifted point projected behind the camera"};
      worst = std::max({worst, std::abs(proj[i].u - x), std::abs(proj[i].v - y)});
      ++count;
    }
  }
  const double dt = seconds_since(t0);
  return {worst <= 1e-4 && dt < 5.0 && count >= 100000,
          fmt("%zu pixels, max error %.2e px, %.2f s", count, worst, dt)};
}

// 2. Warping with memory pose = target pose gives the native PE grid.
Outcome identity_warp() {
  const Intrinsics K = Intrinsics::from_fov(64, 64, 60.0);
  const auto cfg = MultiLevelPEConfig::standard(8, 8);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> depth(0.5f, 30.0f);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const CameraPose pose = testing::random_pose(rng);
    DepthMap d(K.width, K.height);
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x) d.set(x, y, depth(rng));
    const int tau = 1 + trial % 5;
    const TimeAwarePE warped = make_time_aware_pe(compute_warp_maps(d, pose, pose, K), tau, cfg);
    const TimeAwarePE native = native_pe(K.width, K.height, tau, cfg);
    if (warped.tau != native.tau || warped.valid != native.valid) return {false, "tau or validity differs"};
    for (size_t i = 0; i < native.u.size(); ++i)
      worst = std::max({worst, std::abs(warped.u[i] - native.u[i]), std::abs(warped.v[i] - native.v[i])});
  }
  return {worst <= 1e-5, fmt("max PE difference %.2e over 20 poses", worst)};
}

// 3. A fronto-parallel wall at depth z seen after a lateral move b shifts
// every pixel by fx·b/z.
Outcome analytic_disparity() {
  const Intrinsics K = Intrinsics::from_fov(64, 48, 60.0);
  double worst = 0.0;
  for (double z : {2.0, 4.5, 9.0})
    for (double b : {0.05, 0.3, -0.7}) {
      SceneSpec wall;
      wall.room_half = Eigen::Vector3d(50, 50, 50);
      Plane p;
      p.axis = 2;
      p.offset = z;
      p.facing = -1;
      wall.planes.push_back(p);
      DepthMap d;
      render_view(wall, CameraPose::identity(), K, nullptr, &d);
      const CameraPose moved(Eigen::Matrix3d::Identity(), Eigen::Vector3d(b, 0, 0));
      const WarpMaps m = compute_warp_maps(d, CameraPose::identity(), moved, K);
      const double shift = K.fx * b / z;
      for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x) {
          const size_t i = static_cast<size_t>(y) * K.width + x;
          if (!m.valid[i]) return {false, fmt("invalid warp at (%d, %d)", x, y)};
          worst = std::max({worst, std::abs(m.u[i] - (x - shift)), std::abs(m.v[i] - y)});
        }
    }
  return {worst <= 1e-3, fmt("max deviation from fx*b/z %.2e px over 9 (z, b) pairs", worst)};
}

// Block rule of the dual-stream mask, enumerated independently.
bool rule_allows(int n, const std::vector<int>& k, int row, int col) {
  auto kind = [&](int b) { return b < n ? 0 : (b < 2 * n ? 1 : 2); };
  const int rk = kind(row), ck = kind(col);
  if (rk == 0 && ck == 0) return true;
  if (rk == 0 && ck == 1) return col - n == row;
  if (rk == 0 && ck == 2) return k[col - 2 * n] - 1 == row;
  if (rk != 0 && ck == 0) return false;
  return row == col;
}

// 4. Mask true-block counts against brute-force enumeration.
Outcome mask_oracle() {
  std::mt19937_64 rng(4);
  size_t configs = 0;
  for (int n = 1; n <= 6; ++n)
    for (int m = 0; m <= 6; ++m)
      for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<int> pick(1, n);
        std::vector<int> k(m);
        for (int& a : k) a = pick(rng);
        const BlockMask mask = build_dual_stream_mask(n, m, k, 3);
        size_t brute = 0;
        for (int r = 0; r < 2 * n + m; ++r)
          for (int c = 0; c < 2 * n + m; ++c) {
            const bool want = rule_allows(n, k, r, c);
            if (mask.at(r, c) != want) return {false, fmt("block (%d, %d) differs at N=%d M=%d", r, c, n, m)};
            brute += want;
          }
        if (mask.true_blocks() != brute) return {false, fmt("true-block count differs at N=%d M=%d", n, m)};
        ++configs;
      }
  return {true, fmt("%zu configurations, N <= 6, M <= 6", configs)};
}

// 5. Block-sparse attention equals dense masked attention and is faster.
Outcome sparse_attention() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> nd(1, 4), md(0, 6), hd(0, 2);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = nd(rng), m = md(rng), heads = 1 << hd(rng), tpf = 16, dim = 32;
    std::uniform_int_distribution<int> pick(1, n);
    std::vector<int> k(m);
    for (int& a : k) a = pick(rng);
    const BlockMask mask = build_dual_stream_mask(n, m, k, tpf);
    const int len = mask.query_tokens();
    auto random = [&](double s) {
      RowMatrix<double> x(len, dim);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = s * g(rng);
      return x;
    };
    const auto q = random(0.5), kk = random(0.5), v = random(1.0);
    const auto dense = dense_masked_attention(q, kk, v, mask.token_mask(), heads);
    const RowMatrix<float> sparse =
        block_sparse_attention<float>(q.cast<float>(), kk.cast<float>(), v.cast<float>(), mask, heads);
    worst = std::max(worst, (dense - sparse.cast<double>()).cwiseAbs().maxCoeff());
  }
  const AttentionBenchmark b = benchmark_attention(4, 20, 8, 128, 8, 5, 5);
  return {worst <= 1e-5 && b.speedup() >= 1.5,
          fmt("max |sparse - dense| %.2e over 100 configs; N=4 M=20 8x8: sparse %.4f s, dense %.4f s (%.1fx), "
              "true blocks %zu of %zu",
              worst, b.sparse_seconds, b.dense_seconds, b.speedup(), b.sparse_blocks, b.dense_blocks)};
}

// 6. Frustum IoU against the dense grid, top-M against exhaustive ranking.
Outcome retrieval_oracle() {
  const Intrinsics K = Intrinsics::from_fov(64, 64, 60.0);
  std::mt19937_64 rng(6);
  FrustumConfig fc;
  fc.far = 6.0;
  double worst = 0.0;
  int pairs = 0;
  for (int trial = 0; trial < 16; ++trial) {
    const CameraPose a = testing::room_pose(rng, 1.0);
    const CameraPose b = trial % 2 ? testing::room_pose(rng, 1.0)
                                   : compose(a, testing::small_perturbation(rng, 0.5, 1.0));
    worst = std::max(worst, std::abs(frustum_iou(a, b, K, fc) - testing::dense_grid_iou(a, b, K, fc.near, fc.far)));
    ++pairs;
  }
  int banks = 0;
  for (int bank_id = 0; bank_id < 20; ++bank_id) {
    MemoryBank bank;
    for (int i = 0; i < 30; ++i) bank.append({Image(2, 2), DepthMap(2, 2), testing::room_pose(rng), i});
    Trajectory targets;
    for (int i = 0; i < 4; ++i) targets.push_back(testing::room_pose(rng));
    const int m = 1 + bank_id % 6;
    std::vector<double> score;
    for (const auto& r : bank.records()) {
      double best = 0.0;
      for (const auto& t : targets) best = std::max(best, frustum_iou(r.pose, t, K));
      score.push_back(best);
    }
    std::vector<int> order(bank.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
      return score[x] != score[y] ? score[x] > score[y] : bank[x].time > bank[y].time;
    });
    order.resize(m);
    if (retrieve_top_m(bank, targets, K, m).indices != order) return {false, fmt("bank %d ranking differs", bank_id)};
    ++banks;
  }
  return {worst <= 0.05, fmt("max |MC - grid| IoU %.3f over %d pairs; %d banks ranked identically", worst, pairs, banks)};
}

// 7. Identity revisit is bit-exact; masks match brute-force splat coverage.
Outcome curation_exactness() {
  const SceneSpec scene = generate_scene(7, 2);
  const Intrinsics K = Intrinsics::from_fov(64, 64, 60.0);
  const VideoClip clip = render_clip(scene, sample_loop(LoopPath::random(7), 0.0, 6, 32), K);
  for (int i = 0; i < 6; ++i) {
    const CurationSample s = make_revisit_sample(clip, i, CameraPose::identity(), 0);
    if (!(s.image == clip.frames[i])) return {false, fmt("identity revisit of frame %d is not bit-exact", i)};
    if (s.mask.count() != s.mask.bits.size()) return {false, fmt("identity revisit of frame %d has holes", i)};
  }
  const Intrinsics K32 = Intrinsics::from_fov(32, 32, 60.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0), z(0.5, 6.0);
  size_t pixels = 0;
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud pc;
    for (int i = 0; i < 600; ++i) {
      const double d = z(rng);
      pc.points.emplace_back(u(rng) * d * 0.7, u(rng) * d * 0.7, trial % 4 == 0 ? -d : d);
      pc.pixel.push_back(i);
      pc.colors.emplace_back(0.5f, 0.5f, 0.5f);
    }
    const CameraPose pose = testing::small_perturbation(rng, 0.2, 0.3);
    const SplatResult r = splat_render(pc, pose, K32);
    std::vector<int> hits(static_cast<size_t>(K32.width) * K32.height, 0);
    const Eigen::Matrix3d rt = pose.rotation().transpose();
    for (const auto& p : pc.points) {
      const Eigen::Vector3d c = rt * (p - pose.translation());
      if (c.z() <= kMinProjectionDepth) continue;
      const double px = K32.fx * c.x() / c.z() + K32.cx, py = K32.fy * c.y() / c.z() + K32.cy;
      const long x = std::lround(std::floor(px + 0.5)), y = std::lround(std::floor(py + 0.5));
      if (x < 0 || y < 0 || x >= K32.width || y >= K32.height) continue;
      ++hits[static_cast<size_t>(y) * K32.width + x];
    }
    for (size_t i = 0; i < hits.size(); ++i) {
      if ((hits[i] > 0) != (r.mask.bits[i] != 0)) return {false, fmt("mask differs at pixel %zu", i)};
      ++pixels;
    }
  }
  return {true, fmt("6 identity revisits bit-exact; %zu pixels match brute-force coverage", pixels)};
}

ModelConfig small_model() {
  ModelConfig c;
  c.width = 32;
  c.heads = 2;
  c.depth = 2;
  c.ffn_mult = 2;
  c.grid_h = c.grid_w = 2;
  c.context_tokens = 2;
  return c;
}

// 8. Rectified-flow identities and the loss gradient.
Outcome rectified_flow() {
  std::mt19937_64 rng(8);
  std::normal_distribution<float> g(0.0f, 1.0f);
  RowMatrix<float> x0(37, 19), x1(37, 19);
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    x0.data()[i] = g(rng);
    x1.data()[i] = g(rng);
  }
  const bool ends = forward_process(x0, x1, 0.0) == x0 && forward_process(x0, x1, 1.0) == x1;
  const RowMatrix<float> mid = forward_process(x0, x1, 0.5);
  bool half = true;
  for (Eigen::Index i = 0; i < mid.size(); ++i) half &= mid.data()[i] == 0.5f * (x0.data()[i] + x1.data()[i]);

  const RowMatrix<double> a = x0.cast<double>(), b = x1.cast<double>();
  const VelocityField oracle = [&](const RowMatrix<double>& x, double t, bool) {
    return RowMatrix<double>((b - x) / (1.0 - t));
  };
  SamplerConfig sc;
  sc.steps = 1;
  const bool euler = euler_sample(a, sc, oracle) == b;

  // Flow loss of a real training item, double precision, central differences.
  const ModelConfig cfg = small_model();
  const Codec codec;
  const VideoClip clip =
      render_clip(generate_scene(8, 1), sample_loop(LoopPath::random(8), 0.0, 12, 32), Intrinsics::from_fov(16, 16, 60.0));
  TrainConfig tc;
  tc.frames = 5;
  const FlowItem item = make_training_item(codec, cfg, tc, clip, rng);
  std::mt19937_64 init(9);
  ParamStore<double> ps = init_model_params(cfg, init).cast<double>();
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto& [_, p] : ps.all())
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += jitter(rng);
  const RowMatrix<double> target = item.target.cast<double>();
  auto loss = [&] {
    Tape<double> tape;
    const auto r = model_forward(tape, ps, cfg, item.input, false);
    return tape.value(tape.mse(r.velocity, target))(0, 0);
  };
  ps.zero_grad();
  {
    Tape<double> tape;
    const auto r = model_forward(tape, ps, cfg, item.input, true);
    tape.backward(tape.mse(r.velocity, target));
  }
  double worst = 0.0;
  int checked = 0;
  const double h = 1e-5;
  for (auto& [name, p] : ps.all())
    for (int trial = 0; trial < 2; ++trial) {
      const Eigen::Index i = static_cast<Eigen::Index>(rng() % static_cast<uint64_t>(p.value.size()));
      const double saved = p.value.data()[i];
      p.value.data()[i] = saved + h;
      const double fp = loss();
      p.value.data()[i] = saved - h;
      const double fm = loss();
      p.value.data()[i] = saved;
      const double fd = (fp - fm) / (2 * h), an = p.grad.data()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(fd), 1e-6));
      ++checked;
    }
  return {ends && half && euler && worst <= 1e-3,
          fmt("endpoints %s, midpoint %s, one-step Euler %s, max relative gradient error %.2e over %d entries",
              ends ? "exact" : "WRONG", half ? "exact" : "WRONG", euler ? "exact" : "WRONG", worst, checked)};
}

struct ToyModel {
  Checkpoint checkpoint;
  bool trained = false;
  std::string error;
};

// 9. Toy training run. Also used by criterion 10.
Outcome toy_training_run(const fs::path& work, ToyModel& toy) {
  const DatasetConfig dc = toy_dataset();
  fs::remove_all(work / "dataset");
  const DatasetSummary ds = generate_synthetic_dataset(dc, work / "dataset");
  std::vector<VideoClip> clips;
  for (const auto& dir : list_clips(work / "dataset")) clips.push_back(load_clip(dir));
  const ModelConfig mc;
  const CodecConfig cc;
  TrainConfig tc = toy_training();

  // Determinism: a short prefix twice, then against the full run.
  TrainConfig prefix = tc;
  prefix.steps = 10;
  const TrainResult p1 = train(prefix, mc, cc, clips, kInitSeed, kTrainSeed);
  const TrainResult p2 = train(prefix, mc, cc, clips, kInitSeed, kTrainSeed);
  bool same = p1.loss == p2.loss;
  for (const auto& [name, p] : p1.checkpoint.params.all()) same &= p.value == p2.checkpoint.params.at(name).value;

  const auto t0 = Clock::now();
  const TrainResult r = train(tc, mc, cc, clips, kInitSeed, kTrainSeed, [&](int step, double loss, double) {
    if (step % 250 == 0) {
      std::printf("  [train] step %4d loss %.4f (%.0f s)\n", step, loss, seconds_since(t0));
      std::fflush(stdout);
    }
  });
  const double minutes = seconds_since(t0) / 60.0;
  same &= std::equal(p1.loss.begin(), p1.loss.end(), r.loss.begin());
  save_checkpoint(work / "toy.ucmc", r.checkpoint);
  toy.checkpoint = r.checkpoint;
  toy.trained = true;

  const int window = 100;
  double first = 0.0, last = 0.0;
  for (int i = 0; i < window; ++i) {
    first += r.loss[i];
    last += r.loss[r.loss.size() - window + i];
  }
  first /= window;
  last /= window;
  const double ratio = last / first;
  return {minutes < 30.0 && ratio <= 0.2 && same,
          fmt("%d scenes, %d clips, 64x64, T=9, batch %d, 2000 steps in %.1f min; loss first-100 mean %.4f, "
              "last-100 mean %.4f (%.1f%%); deterministic %s",
              ds.scenes, ds.clips, tc.batch, minutes, first, last, 100.0 * ratio, same ? "yes" : "NO")};
}

// 10. Cycle-protocol PSNR against memory size on held-out scenes.
Outcome memory_trend(ToyModel& toy, const fs::path& work) {
  if (!toy.trained) {
    if (!fs::exists(work / "toy.ucmc")) return {false, "no trained model"};
    toy.checkpoint = load_checkpoint(work / "toy.ucmc");
    toy.trained = true;
  }
  const DatasetConfig dc = toy_dataset();
  const Intrinsics K = Intrinsics::from_fov(dc.width, dc.height, dc.fov_deg);
  const Codec codec(toy.checkpoint.codec);
  const int half = toy_training().frames;
  std::map<int, std::vector<double>> psnr_by_m;
  std::map<int, double> ssim_sum;
  for (int s = kTrainScenes; s < kTrainScenes + kHeldOutScenes; ++s) {
    const SceneSpec scene = dataset_scene(dc, s);
    const Trajectory cycle = make_cycle(sample_loop(dataset_loop(dc, s), 0.0, half, dc.frames_per_loop));
    Image first;
    DepthMap depth;
    render_view(scene, cycle[0], K, &first, &depth);
    const ConditionFrame ref{first.quantized(), depth, cycle[0], {}};
    const DepthFn depth_fn = [&](const CameraPose& p) {
      DepthMap d;
      render_view(scene, p, K, nullptr, &d);
      return d;
    };
    for (int m : {0, 2, 4}) {
      ModelGeneratorConfig gc;
      gc.clip_frames = half;
      gc.memories = m;
      gc.class_id = scene.class_id;
      gc.seed = kSampleSeed + static_cast<uint64_t>(s);
      const MetricReport rep = cycle_protocol(model_generator(toy.checkpoint, codec, K, gc, depth_fn), ref, cycle);
      psnr_by_m[m].push_back(rep.psnr_db);
      ssim_sum[m] += rep.ssim;
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  std::ostringstream detail;
  detail << "cycle PSNR/SSIM over " << kHeldOutScenes << " held-out scenes:";
  for (const auto& [m, v] : psnr_by_m)
    detail << fmt(" M=%d %.2f dB / %.3f;", m, mean(v), ssim_sum[m] / static_cast<double>(v.size()));
  const double gap = mean(psnr_by_m[4]) - mean(psnr_by_m[0]);
  detail << fmt(" gap M=4 vs M=0 %+.2f dB", gap);
  return {gap >= 1.0, detail.str()};
}

// 11. Metric closed forms.
Outcome metric_correctness() {
  std::mt19937_64 rng(11);
  Trajectory a;
  for (int i = 0; i < 10; ++i) a.push_back(testing::random_pose(rng));
  Trajectory rotated, shifted;
  const Eigen::Matrix3d r10 = Eigen::AngleAxisd(10.0 * std::numbers::pi / 180.0, Eigen::Vector3d::UnitX()).matrix();
  for (const auto& p : a) {
    rotated.emplace_back(p.rotation() * r10, p.translation());
    shifted.emplace_back(p.rotation(), p.translation() + Eigen::Vector3d(0.0, 0.6, 0.8));
  }
  const double zr = rot_err(a, a), zt = trans_err(a, a);
  const CameraErrors zn = camera_errors(a, a);
  const double r = rot_err(a, rotated), t = trans_err(a, shifted);
  Image x(32, 24);
  std::uniform_real_distribution<float> u(0.0f, 0.9f);
  for (float& v : x.data()) v = u(rng);
  Image y = x;
  for (float& v : y.data()) v += 0.1f;
  const double p = psnr(x, y), same = ssim(x, x);
  const bool ok = zr <= 1e-6 && zt <= 1e-6 && zn.rot_err_deg <= 1e-6 && zn.trans_err <= 1e-6 &&
                  std::abs(r - 10.0) <= 1e-6 && std::abs(t - 1.0) <= 1e-6 && std::abs(p - 20.0) <= 1e-4 &&
                  std::abs(same - 1.0) <= 1e-9 && psnr(x, x) == kPsnrCap;
  return {ok, fmt("zero case rot %.1e deg trans %.1e; 10 deg offset -> %.9f; unit offset -> %.9f; "
                  "0.1 error -> %.6f dB; SSIM(x, x) = %.12f",
                  zr, zt, r, t, p, same)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "Scratch directory for the dataset and trained model");
  app.add_option("--only", only, "Run only these criteria (10 reuses <work-dir>/toy.ucmc when 9 is skipped)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  ToyModel toy;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"geometry round trip", geometry_round_trip},
      {"identity-warp anchor", identity_warp},
      {"analytic disparity", analytic_disparity},
      {"mask oracle", mask_oracle},
      {"sparse attention equivalence and speed", sparse_attention},
      {"retrieval oracle", retrieval_oracle},
      {"curation exactness", curation_exactness},
      {"rectified-flow identities", rectified_flow},
      {"toy training", [&] { return toy_training_run(work, toy); }},
      {"memory trend", [&] { return memory_trend(toy, work); }},
      {"metric correctness", metric_correctness},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
