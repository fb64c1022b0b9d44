#include <doctest.h>

#include "test_util.hpp"
#include "ucm/pe_warp.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace ucm;

namespace {

Intrinsics camera64() {
  Intrinsics k;
  k.fx = k.fy = 60.0;
  k.cx = k.cy = 31.5;
  k.width = k.height = 64;
  return k;
}

DepthMap constant_depth(const Intrinsics& K, float z) {
  DepthMap d(K.width, K.height);
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) d.set(x, y, z);
  return d;
}

DepthMap random_depth(const Intrinsics& K, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(1.0f, 8.0f);
  DepthMap d(K.width, K.height);
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) d.set(x, y, u(rng));
  return d;
}

TimeAwarePE random_pe(std::mt19937_64& rng, int tokens, int views) {
  std::uniform_real_distribution<double> c(-6.0, 6.0);
  std::uniform_int_distribution<int> tau(1, 9);
  TimeAwarePE pe;
  pe.tokens = tokens;
  pe.views = views;
  pe.valid.assign(tokens, 1);
  for (int t = 0; t < tokens; ++t) pe.tau.push_back(tau(rng));
  for (int i = 0; i < tokens * views; ++i) {
    pe.u.push_back(c(rng));
    pe.v.push_back(c(rng));
  }
  return pe;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

TEST_CASE("compute_warp_maps identity warp") {
  const auto K = camera64();
  std::mt19937_64 rng(10);
  const auto pose = testing::random_pose(rng);
  const auto d = random_depth(K, rng);
  const auto m = compute_warp_maps(d, pose, pose, K);
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      const size_t i = static_cast<size_t>(y) * K.width + x;
      REQUIRE(m.valid[i]);
      CHECK(std::abs(m.u[i] - x) < 1e-9);
      CHECK(std::abs(m.v[i] - y) < 1e-9);
    }
}

TEST_CASE("compute_warp_maps analytic disparity") {
  const auto K = camera64();
  const double z = 4.0, b = 0.3;
  const auto d = constant_depth(K, static_cast<float>(z));
  const CameraPose src = CameraPose::identity();
  const CameraPose dst(Eigen::Matrix3d::Identity(), Eigen::Vector3d(b, 0, 0));
  const auto m = compute_warp_maps(d, src, dst, K);
  // Moving the camera right by b shifts the image left by fx·b/z.
  const double shift = K.fx * b / z;
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      const size_t i = static_cast<size_t>(y) * K.width + x;
      CHECK(std::abs(m.u[i] - (x - shift)) < 1e-3);
      CHECK(std::abs(m.v[i] - y) < 1e-3);
    }
}

TEST_CASE("compute_warp_maps behind camera") {
  const auto K = camera64();
  const auto d = constant_depth(K, 3.0f);
  const auto dst = CameraPose::from_axis_angle(Eigen::Vector3d::UnitY(), std::numbers::pi);
  const auto m = compute_warp_maps(d, CameraPose::identity(), dst, K);
  for (auto v : m.valid) CHECK(v == 0);
}

TEST_CASE("warp maps compose through an intermediate view") {
  const auto K = camera64();
  std::mt19937_64 rng(11);
  const auto src = testing::random_pose(rng, 0.5);
  const auto mid = compose(src, testing::small_perturbation(rng, 0.2, 0.3));
  const auto dst = compose(mid, testing::small_perturbation(rng, 0.2, 0.3));
  const auto d = random_depth(K, rng);
  const auto direct = compute_warp_maps(d, src, dst, K);
  const auto pc = lift_depth(d, src, K);
  const auto in_mid = project_points(pc, mid, K);
  for (size_t i = 0; i < pc.size(); ++i) {
    if (!in_mid[i].valid || !direct.valid[pc.pixel[i]]) continue;
    const double z = in_mid[i].z;
    const Eigen::Vector3d cam((in_mid[i].u - K.cx) * z / K.fx, (in_mid[i].v - K.cy) * z / K.fy, z);
    const auto p = project_point(mid.apply(cam), dst, K);
    CHECK(std::abs(p.u - direct.u[pc.pixel[i]]) < 1e-4);
    CHECK(std::abs(p.v - direct.v[pc.pixel[i]]) < 1e-4);
  }
}

TEST_CASE("pool_coords_to_level") {
  auto cfg = MultiLevelPEConfig::standard(8, 8);
  const auto id = WarpMaps::identity(64, 64);

  const auto l0 = pool_coords_to_level(id, cfg, 0);
  REQUIRE(l0.grid_w == 8);
  // Mean of pixel range [8t, 8t+7] is 8t + 3.5.
  for (int ty = 0; ty < 8; ++ty)
    for (int tx = 0; tx < 8; ++tx) {
      CHECK(l0.u[ty * 8 + tx] == doctest::Approx((8 * tx + 3.5) / 8));
      CHECK(l0.v[ty * 8 + tx] == doctest::Approx((8 * ty + 3.5) / 8));
    }

  const auto l1 = pool_coords_to_level(id, cfg, 1);
  // Quadrant (sx, sy) covers pixels [8t + 4s, 8t + 4s + 3], mean 8t + 4s + 1.5.
  for (int sy = 0; sy < 2; ++sy)
    for (int sx = 0; sx < 2; ++sx) {
      const size_t o = (3 * 8 + 5) * 4 + sy * 2 + sx;
      CHECK(l1.u[o] == doctest::Approx((8 * 5 + 4 * sx + 1.5) / 8));
      CHECK(l1.v[o] == doctest::Approx((8 * 3 + 4 * sy + 1.5) / 8));
    }

  auto holes = id;
  for (int y = 0; y < 8; ++y)
    for (int x = 8; x < 16; ++x) holes.valid[y * 64 + x] = 0;
  const auto h0 = pool_coords_to_level(holes, cfg, 0);
  CHECK(h0.valid[1] == 0);
  CHECK(h0.valid[0] == 1);

  auto shifted = id;
  const double delta = 2.75;
  for (auto& u : shifted.u) u += delta;
  const auto s1 = pool_coords_to_level(shifted, cfg, 1);
  for (size_t i = 0; i < s1.u.size(); ++i) CHECK(s1.u[i] - l1.u[i] == doctest::Approx(delta / 8));

  CHECK_THROWS(pool_coords_to_level(id, cfg, 2));
}

TEST_CASE("time-aware PE: identity pose reproduces the native grid") {
  const auto K = camera64();
  const auto cfg = MultiLevelPEConfig::standard(8, 8);
  std::mt19937_64 rng(12);
  const auto pose = testing::random_pose(rng);
  const auto d = random_depth(K, rng);
  const auto warped = make_time_aware_pe(compute_warp_maps(d, pose, pose, K), 3, cfg);
  const auto native = native_pe(64, 64, 3, cfg);
  REQUIRE(warped.tokens == native.tokens);
  for (int t = 0; t < native.tokens; ++t) CHECK(warped.tau[t] == native.tau[t]);
  for (size_t i = 0; i < native.u.size(); ++i) {
    CHECK(std::abs(warped.u[i] - native.u[i]) < 1e-5);
    CHECK(std::abs(warped.v[i] - native.v[i]) < 1e-5);
  }
  CHECK(warped.valid_count() == static_cast<size_t>(native.tokens));
}

TEST_CASE("invalid sub-cells fall back to the patch coordinate") {
  const auto cfg = MultiLevelPEConfig::standard(8, 8);
  auto maps = WarpMaps::identity(64, 64);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) maps.valid[y * 64 + x] = 0;  // top-left quadrant of token 0
  const auto pe = make_time_aware_pe(maps, 1, cfg);
  CHECK(pe.valid[0] == 1);
  CHECK(pe.u[1] == doctest::Approx(pe.u[0]));
  CHECK(pe.v[1] == doctest::Approx(pe.v[0]));
}

TEST_CASE("assemble_condition_set") {
  const auto cfg = MultiLevelPEConfig::standard(8, 8);
  const LatentClip ref(1, 8, 8, 4);
  const auto id = WarpMaps::identity(64, 64);

  {
    std::vector<WarpMaps> rw(3, id);
    const auto set = assemble_condition_set(ref, {}, rw, {}, {}, cfg);
    REQUIRE(set.entries.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(set.entries[i].source == 0);
      CHECK(set.entries[i].frame == i + 1);
      CHECK(set.entries[i].pe.tau[0] == i + 1);
    }
  }
  {
    std::vector<WarpMaps> rw(2, id), mw(1, id);
    std::vector<LatentClip> mem(1, ref);
    std::vector<int> k = {2};
    const auto set = assemble_condition_set(ref, mem, rw, mw, k, cfg);
    REQUIRE(set.entries.size() == 3);
    CHECK(set.entries[0].frame == 1);
    CHECK(set.entries[1].frame == 2);
    CHECK(set.entries[2].frame == 2);
    CHECK(set.entries[2].source == 1);
    CHECK(set.assignments() == std::vector<int>{2});

    k = {3};
    CHECK_THROWS_AS(assemble_condition_set(ref, mem, rw, mw, k, cfg), std::out_of_range);
    k = {0};
    CHECK_THROWS_AS(assemble_condition_set(ref, mem, rw, mw, k, cfg), std::out_of_range);
  }
  {
    // 4×4 latent grid from 32×32 pixels at stride 8.
    const LatentClip small(1, 4, 4, 4);
    const auto id32 = WarpMaps::identity(32, 32);
    std::vector<WarpMaps> rw(21, id32), mw(20, id32);
    std::vector<LatentClip> mem(20, small);
    std::vector<int> k(20);
    for (int j = 0; j < 20; ++j) k[j] = 2 + j % 20;
    const auto set = assemble_condition_set(small, mem, rw, mw, k, cfg);
    CHECK(set.token_count() == 656);
  }
}

TEST_CASE("assemble_condition_set size and assignment multiset") {
  const auto cfg = MultiLevelPEConfig::standard(8, 8);
  const LatentClip ref(1, 2, 2, 4);
  const auto id = WarpMaps::identity(16, 16);
  std::mt19937_64 rng(13);
  for (int n = 1; n <= 6; ++n) {
    for (int m = 0; m <= 6; ++m) {
      std::uniform_int_distribution<int> pick(1, n);
      std::vector<int> k(m);
      for (auto& x : k) x = pick(rng);
      std::vector<WarpMaps> rw(n, id), mw(m, id);
      std::vector<LatentClip> mem(m, ref);
      const auto set = assemble_condition_set(ref, mem, rw, mw, k, cfg);
      CHECK(set.token_count() == static_cast<size_t>((n + m) * 4));
      std::vector<int> frames;
      for (const auto& e : set.entries) frames.push_back(e.frame);
      std::vector<int> expected;
      for (int i = 1; i <= n; ++i) expected.push_back(i);
      expected.insert(expected.end(), k.begin(), k.end());
      CHECK(frames == expected);
    }
  }
}

TEST_CASE("apply_rope") {
  RopeConfig cfg;
  cfg.heads = 4;
  cfg.head_dim = 16;
  cfg.levels = MultiLevelPEConfig::standard(4, 8);
  const int views = cfg.levels.view_count();
  std::mt19937_64 rng(14);
  const int tokens = 5;
  const int width = cfg.heads * cfg.head_dim;

  SUBCASE("zero position is the identity") {
    TimeAwarePE pe;
    pe.tokens = tokens;
    pe.views = views;
    pe.tau.assign(tokens, 0);
    pe.u.assign(tokens * views, 0.0);
    pe.v.assign(tokens * views, 0.0);
    pe.valid.assign(tokens, 1);
    RowMat x = RowMat::Random(tokens, width);
    RowMat y = x;
    apply_rope(y, pe, cfg);
    CHECK((x - y).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("pairs keep their norm") {
    const auto pe = random_pe(rng, tokens, views);
    RowMat x = RowMat::Random(tokens, width);
    RowMat y = x;
    apply_rope(y, pe, cfg);
    for (int t = 0; t < tokens; ++t)
      for (int c = 0; c < width; c += 2)
        CHECK(std::abs(std::hypot(x(t, c), x(t, c + 1)) - std::hypot(y(t, c), y(t, c + 1))) < 1e-6);
  }

  SUBCASE("logits depend only on relative position") {
    for (int trial = 0; trial < 50; ++trial) {
      auto p1 = random_pe(rng, 1, views);
      auto p2 = random_pe(rng, 1, views);
      std::uniform_real_distribution<double> dd(-10.0, 10.0);
      const int dt = std::uniform_int_distribution<int>(-5, 5)(rng);
      auto s1 = p1, s2 = p2;
      s1.tau[0] += dt;
      s2.tau[0] += dt;
      const double du = dd(rng), dv = dd(rng);
      for (int v = 0; v < views; ++v) {
        s1.u[v] += du;
        s2.u[v] += du;
        s1.v[v] += dv;
        s2.v[v] += dv;
      }
      RowMat q = RowMat::Random(1, width), k = RowMat::Random(1, width);
      RowMat q1 = q, k1 = k, q2 = q, k2 = k;
      apply_rope(q1, p1, cfg);
      apply_rope(k1, p2, cfg);
      apply_rope(q2, s1, cfg);
      apply_rope(k2, s2, cfg);
      for (int h = 0; h < cfg.heads; ++h) {
        const double a = q1.block(0, h * 16, 1, 16).cwiseProduct(k1.block(0, h * 16, 1, 16)).sum();
        const double b = q2.block(0, h * 16, 1, 16).cwiseProduct(k2.block(0, h * 16, 1, 16)).sum();
        CHECK(std::abs(a - b) < 1e-5);
      }
    }
  }

  SUBCASE("inverse rotation undoes the forward rotation") {
    const auto pe = random_pe(rng, tokens, views);
    const auto table = build_rope_table(pe, cfg);
    RowMat x = RowMat::Random(tokens, width);
    RowMat y = x;
    rotate_rows(y, table);
    rotate_rows(y, table, true);
    CHECK((x - y).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("heads read their own level") {
    auto pe = random_pe(rng, 1, views);
    const auto table = build_rope_table(pe, cfg);
    // Heads 0,1 read view 0; heads 2,3 read quadrants 1 and 2. Pair 2 is the
    // first u pair with frequency 1.
    CHECK(table.cos[0 * 8 + 2] == doctest::Approx(std::cos(pe.u[0])));
    CHECK(table.cos[2 * 8 + 2] == doctest::Approx(std::cos(pe.u[1])));
    CHECK(table.cos[3 * 8 + 2] == doctest::Approx(std::cos(pe.u[2])));
  }

  SUBCASE("head dims must allow the axis split") {
    RopeConfig bad = cfg;
    bad.head_dim = 8;
    CHECK_THROWS(bad.validate());
  }
}
