#include <doctest.h>

#include "test_util.hpp"
#include "ucm/eval.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace ucm;
using ucm::testing::random_pose;

namespace {

Image random_image(std::mt19937_64& rng, int w, int h, float lo = 0.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Image im(w, h);
  for (float& v : im.data()) v = u(rng);
  return im;
}

Trajectory random_trajectory(std::mt19937_64& rng, int n) {
  Trajectory t;
  for (int i = 0; i < n; ++i) t.push_back(random_pose(rng));
  return t;
}

double quaternion_angle_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const Eigen::Quaterniond qa(a), qb(b);
  const double d = std::min(1.0, std::abs(qa.dot(qb)));
  return 2.0 * std::acos(d) * 180.0 / std::numbers::pi;
}

// Direct per-window SSIM with a 2D Gaussian kernel.
double ssim_oracle(const Image& a, const Image& b) {
  double k[11][11], sum = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) sum += k[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < 3; ++c)
    for (int y0 = 0; y0 + 11 <= a.height(); ++y0)
      for (int x0 = 0; x0 + 11 <= a.width(); ++x0) {
        double mx = 0, my = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            mx += k[i][j] / sum * a.at(x0 + j, y0 + i, c);
            my += k[i][j] / sum * b.at(x0 + j, y0 + i, c);
          }
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double dx = a.at(x0 + j, y0 + i, c) - mx, dy = b.at(x0 + j, y0 + i, c) - my;
            vx += k[i][j] / sum * dx * dx;
            vy += k[i][j] / sum * dy * dy;
            cov += k[i][j] / sum * dx * dy;
          }
        total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
  return total / count;
}

VideoClip small_clip(int frames, uint64_t seed = 3) {
  const SceneSpec scene = generate_scene(seed, 1);
  return render_clip(scene, sample_loop(LoopPath::random(seed), 0.0, frames, 32), Intrinsics::from_fov(16, 16, 60.0));
}

}  // namespace

TEST_CASE("rotation error matches the quaternion angle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Trajectory a{random_pose(rng)}, b{random_pose(rng)};
    CHECK(std::abs(rot_err(a, b) - quaternion_angle_deg(a[0].rotation(), b[0].rotation())) <= 1e-6);
  }
  const Trajectory a = random_trajectory(rng, 10);
  CHECK(rot_err(a, a) == 0.0);
  CHECK(trans_err(a, a) == 0.0);
}

TEST_CASE("known camera offsets") {
  std::mt19937_64 rng(2);
  const Trajectory a = random_trajectory(rng, 12);
  Trajectory rotated, shifted;
  const Eigen::Matrix3d r10 = Eigen::AngleAxisd(10.0 * std::numbers::pi / 180.0, Eigen::Vector3d::UnitY()).matrix();
  const Eigen::Vector3d unit = Eigen::Vector3d(1, -2, 2).normalized();
  for (const auto& p : a) {
    rotated.emplace_back(p.rotation() * r10, p.translation());
    shifted.emplace_back(p.rotation(), p.translation() + unit);
  }
  CHECK(std::abs(rot_err(a, rotated) - 10.0) <= 1e-6);
  CHECK(std::abs(trans_err(a, shifted) - 1.0) <= 1e-6);
  CHECK(rot_err(a, shifted) == 0.0);

  const Trajectory b = random_trajectory(rng, 12);
  double direct = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const Eigen::Vector3d d = a[i].translation() - b[i].translation();
    direct += std::sqrt(d.x() * d.x() + d.y() * d.y() + d.z() * d.z());
  }
  CHECK(std::abs(trans_err(a, b) - direct / 12.0) <= 1e-9);
  CHECK_THROWS_AS(rot_err(a, Trajectory(a.begin(), a.end() - 1)), std::invalid_argument);
  CHECK_THROWS_AS(trans_err({}, {}), std::invalid_argument);
}

TEST_CASE("normalized camera errors are invariant to a global pose") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Trajectory a = random_trajectory(rng, 8), b = random_trajectory(rng, 8);
    const CameraPose g = random_pose(rng);
    Trajectory ga, gb;
    for (size_t i = 0; i < a.size(); ++i) {
      ga.push_back(compose(g, a[i]));
      gb.push_back(compose(g, b[i]));
    }
    const CameraErrors e = camera_errors(a, b), eg = camera_errors(ga, gb);
    CHECK(e.rot_err_deg == doctest::Approx(eg.rot_err_deg).epsilon(1e-9));
    CHECK(e.trans_err == doctest::Approx(eg.trans_err).epsilon(1e-9));
    CHECK(e.rot_err_deg > 0.0);
    const CameraErrors same = camera_errors(a, ga);
    CHECK(same.rot_err_deg < 1e-6);
    CHECK(same.trans_err < 1e-9);
  }
}

TEST_CASE("psnr") {
  std::mt19937_64 rng(4);
  const Image a = random_image(rng, 20, 15, 0.0f, 0.9f);
  Image b = a;
  for (float& v : b.data()) v += 0.1f;
  CHECK(std::abs(psnr(a, b) - 20.0) <= 1e-5);
  CHECK(psnr(a, a) == kPsnrCap);
  double last = kPsnrCap + 1;
  for (float e : {0.001f, 0.01f, 0.05f, 0.2f, 0.5f}) {
    Image c = a;
    for (float& v : c.data()) v += e;
    const double p = psnr(a, c);
    CHECK(p < last);
    CHECK(p >= 0.0);
    last = p;
  }
  CHECK_THROWS_AS(psnr(a, Image(15, 20)), std::invalid_argument);
}

TEST_CASE("ssim") {
  std::mt19937_64 rng(5);
  const Image a = random_image(rng, 17, 13), b = random_image(rng, 17, 13);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-9);
  CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) <= 1e-9);
  CHECK(ssim(a, b) < 0.5);
  Image inverted = a;
  for (float& v : inverted.data()) v = 1.0f - v;
  CHECK(ssim(a, inverted) < 0.0);
  CHECK(ssim(a, inverted) >= -1.0);
  Image c = a;
  c.at(6, 6, 1) += 0.2f;
  CHECK(ssim(a, c) < 1.0);
  const Image flat(12, 12, 0.4f);
  CHECK(ssim(flat, flat) == doctest::Approx(1.0));
  CHECK_THROWS_AS(ssim(Image(10, 10), Image(10, 10)), std::invalid_argument);
  CHECK_THROWS_AS(ssim(a, Image(13, 17)), std::invalid_argument);
}

TEST_CASE("report serialization") {
  MetricReport r;
  r.protocol = "cycle";
  r.frames = {{5, 0, 30.0, 0.9, 1.0, 0.5}, {4, 1, 20.0, 0.7, 3.0, 0.1}};
  r.summarize();
  CHECK(r.psnr_db == 25.0);
  CHECK(r.ssim == doctest::Approx(0.8));
  CHECK(r.rot_err_deg == 2.0);
  const auto j = r.to_json();
  CHECK(j["protocol"] == "cycle");
  CHECK(j["frames"].size() == 2);
  CHECK(j["frames"][1]["reference"] == 1);
  std::ostringstream csv;
  r.write_csv(csv);
  const std::string text = csv.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  std::ostringstream table;
  r.write_table(table);
  CHECK(table.str().find("mean") != std::string::npos);

  const auto dir = std::filesystem::temp_directory_path() / "ucm_test_report";
  std::filesystem::remove_all(dir);
  r.save(dir);
  std::ifstream is(dir / "report.json");
  CHECK(nlohmann::json::parse(is)["psnr_db"] == 25.0);
  CHECK(std::filesystem::exists(dir / "report.txt"));
  CHECK(std::filesystem::exists(dir / "frames.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("memory initialization protocol") {
  CHECK(history_length(100) == 60);
  CHECK(history_length(17) == 10);
  const VideoClip clip = small_clip(100);
  size_t seen_poses = 0, seen_bank = 0;
  const Generator probe = [&](const ConditionFrame& ref, const Trajectory& poses, MemoryBank& bank) {
    seen_poses = poses.size();
    seen_bank = bank.size();
    CHECK(ref.image == clip.frames[59]);
    return std::vector<Image>(poses.size(), clip.frames[0]);
  };
  const MetricReport probed = memory_init_protocol(probe, clip);
  CHECK(seen_poses == 41);
  CHECK(seen_bank == 60);
  CHECK(probed.frames.size() == 40);
  CHECK(probed.frames.front().frame == 60);
  CHECK(probed.metadata["history"] == 60);
  CHECK(probed.metadata["generated"] == 40);

  const SceneSpec scene = generate_scene(3, 1);
  const MetricReport perfect = memory_init_protocol(oracle_generator(scene, clip.K), clip);
  CHECK(perfect.psnr_db == kPsnrCap);
  CHECK(perfect.ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(perfect.rot_err_deg == 0.0);

  const Generator short_gen = [](const ConditionFrame&, const Trajectory& poses, MemoryBank&) {
    return std::vector<Image>(poses.size() - 1, Image(16, 16));
  };
  CHECK_THROWS_AS(memory_init_protocol(short_gen, clip), std::runtime_error);
  CHECK_THROWS_AS(memory_init_protocol(probe, small_clip(1)), std::invalid_argument);
}

TEST_CASE("cycle protocol") {
  const SceneSpec scene = generate_scene(4, 2);
  const Intrinsics K = Intrinsics::from_fov(16, 16, 60.0);
  const Trajectory path = sample_loop(LoopPath::random(4), 0.0, 9, 32);
  const Trajectory cycle = make_cycle(path);
  CHECK(cycle.size() == 17);
  CHECK(is_palindromic(cycle));
  CHECK_FALSE(is_palindromic(path));

  Image first;
  DepthMap depth;
  render_view(scene, cycle[0], K, &first, &depth);
  const ConditionFrame ref{first.quantized(), depth, cycle[0], {}};
  const MetricReport perfect = cycle_protocol(oracle_generator(scene, K), ref, cycle);
  CHECK(perfect.frames.size() == 8);
  CHECK(perfect.frames[0].frame == 16);
  CHECK(perfect.frames[0].reference == 0);
  CHECK(perfect.psnr_db == kPsnrCap);
  CHECK(perfect.ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(perfect.trans_err < 1e-12);

  CHECK_THROWS_AS(cycle_protocol(oracle_generator(scene, K), ref, path), std::invalid_argument);
  ConditionFrame moved = ref;
  moved.pose = cycle[1];
  CHECK_THROWS_AS(cycle_protocol(oracle_generator(scene, K), moved, cycle), std::invalid_argument);
}

TEST_CASE("model generator pads to whole clips") {
  ModelConfig cfg;
  cfg.width = 32;
  cfg.heads = 2;
  cfg.depth = 1;
  cfg.ffn_mult = 2;
  cfg.grid_h = cfg.grid_w = 2;
  cfg.context_tokens = 2;
  Checkpoint ck;
  ck.model = cfg;
  std::mt19937_64 rng(6);
  ck.params = init_model_params(cfg, rng);
  const Codec codec;
  const SceneSpec scene = generate_scene(5, 0);
  const Intrinsics K = Intrinsics::from_fov(16, 16, 60.0);
  const DepthFn depth = [&](const CameraPose& p) {
    DepthMap d;
    render_view(scene, p, K, nullptr, &d);
    return d;
  };
  ModelGeneratorConfig gc;
  gc.clip_frames = 5;
  gc.memories = 2;
  gc.sampler.steps = 2;
  const Generator gen = model_generator(ck, codec, K, gc, depth);
  const VideoClip clip = small_clip(7, 5);
  MemoryBank bank;
  const auto frames = gen({clip.frames[0], clip.depth[0], clip.poses[0], {}}, clip.poses, bank);
  CHECK(frames.size() == 7);
  CHECK(frames[0] == clip.frames[0]);
  CHECK(bank.size() == 10);
  const MetricReport r = memory_init_protocol(gen, small_clip(12, 5));
  CHECK(r.frames.size() == 5);
  CHECK(std::isfinite(r.psnr_db));
}
