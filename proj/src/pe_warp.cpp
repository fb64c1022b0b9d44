#include "ucm/pe_warp.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace ucm {

LatentClip::LatentClip(int frames_, int grid_h_, int grid_w_, int channels_, Kind kind_)
    : frames(frames_),
      grid_h(grid_h_),
      grid_w(grid_w_),
      channels(channels_),
      kind(kind_),
      data(static_cast<size_t>(frames_) * grid_h_ * grid_w_ * channels_, 0.0f),
      time_index(frames_) {
  for (int i = 0; i < frames; ++i) time_index[i] = i + 1;
}

Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> LatentClip::tokens() {
  return {data.data(), token_count(), channels};
}

Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> LatentClip::tokens()
    const {
  return {data.data(), token_count(), channels};
}

LatentClip LatentClip::frame(int i) const {
  if (i < 0 || i >= frames) throw std::out_of_range("LatentClip::frame index out of range");
  LatentClip out(1, grid_h, grid_w, channels, kind);
  const size_t n = static_cast<size_t>(tokens_per_frame()) * channels;
  std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(i * n), n, out.data.begin());
  out.time_index[0] = time_index[i];
  return out;
}

WarpMaps WarpMaps::identity(int width, int height) {
  WarpMaps m;
  m.width = width;
  m.height = height;
  const size_t n = static_cast<size_t>(width) * height;
  m.u.resize(n);
  m.v.resize(n);
  m.valid.assign(n, 1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      m.u[static_cast<size_t>(y) * width + x] = x;
      m.v[static_cast<size_t>(y) * width + x] = y;
    }
  return m;
}

WarpMaps compute_warp_maps(const DepthMap& d, const CameraPose& src, const CameraPose& dst, const Intrinsics& K) {
  if (d.width != K.width || d.height != K.height)
    throw std::invalid_argument("compute_warp_maps: depth map size does not match intrinsics");
  WarpMaps m;
  m.width = d.width;
  m.height = d.height;
  const size_t n = d.size();
  m.u.assign(n, 0.0);
  m.v.assign(n, 0.0);
  m.valid.assign(n, 0);
  // Source camera -> destination camera in one transform.
  const CameraPose rel = compose(invert_pose(dst), src);
  const Eigen::Matrix3d& r = rel.rotation();
  const Eigen::Vector3d& t = rel.translation();
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      if (!d.is_valid(x, y)) continue;
      const double z = d.at(x, y);
      const Eigen::Vector3d p = r * Eigen::Vector3d((x - K.cx) * z / K.fx, (y - K.cy) * z / K.fy, z) + t;
      if (!(p.z() > kMinProjectionDepth)) continue;
      const size_t i = static_cast<size_t>(y) * d.width + x;
      m.u[i] = K.fx * p.x() / p.z() + K.cx;
      m.v[i] = K.fy * p.y() / p.z() + K.cy;
      m.valid[i] = 1;
    }
  }
  return m;
}

int MultiLevelPEConfig::view_count() const {
  int n = 0;
  for (int f : level_factors) n += f * f;
  return n;
}

int MultiLevelPEConfig::view_offset(int level) const {
  int n = 0;
  for (int l = 0; l < level; ++l) n += level_factors[l] * level_factors[l];
  return n;
}

MultiLevelPEConfig MultiLevelPEConfig::standard(int heads, int patch) {
  MultiLevelPEConfig cfg;
  cfg.patch = patch;
  cfg.level_factors = {1, 2};
  cfg.head_view.resize(heads);
  const int coarse = heads / 2;
  for (int h = 0; h < heads; ++h) cfg.head_view[h] = h < coarse ? 0 : 1 + (h - coarse) % 4;
  return cfg;
}

void MultiLevelPEConfig::validate(int heads) const {
  if (patch < 1) throw std::invalid_argument("PE levels: patch must be positive");
  if (level_factors.empty() || level_factors[0] != 1)
    throw std::invalid_argument("PE levels: level 0 must pool the whole patch");
  for (int f : level_factors)
    if (f < 1 || patch % f != 0) throw std::invalid_argument("PE levels: factor must divide the patch size");
  if (static_cast<int>(head_view.size()) != heads)
    throw std::invalid_argument("PE levels: need one view per head");
  for (int v : head_view)
    if (v < 0 || v >= view_count()) throw std::invalid_argument("PE levels: head view out of range");
}

PooledCoords pool_coords_to_level(const WarpMaps& maps, const MultiLevelPEConfig& cfg, int level) {
  if (level < 0 || level >= cfg.levels()) throw std::invalid_argument("pool_coords_to_level: level out of range");
  const int s = cfg.patch;
  if (maps.width % s != 0 || maps.height % s != 0)
    throw std::invalid_argument("pool_coords_to_level: map size not divisible by patch");
  PooledCoords out;
  out.factor = cfg.level_factors[level];
  out.grid_w = maps.width / s;
  out.grid_h = maps.height / s;
  const int f = out.factor;
  const int cell = s / f;
  const size_t n = static_cast<size_t>(out.grid_w) * out.grid_h * f * f;
  out.u.assign(n, 0.0);
  out.v.assign(n, 0.0);
  out.valid.assign(n, 0);
  for (int ty = 0; ty < out.grid_h; ++ty) {
    for (int tx = 0; tx < out.grid_w; ++tx) {
      for (int sy = 0; sy < f; ++sy) {
        for (int sx = 0; sx < f; ++sx) {
          double su = 0.0, sv = 0.0;
          int count = 0;
          for (int y = ty * s + sy * cell; y < ty * s + (sy + 1) * cell; ++y) {
            for (int x = tx * s + sx * cell; x < tx * s + (sx + 1) * cell; ++x) {
              const size_t i = static_cast<size_t>(y) * maps.width + x;
              if (!maps.valid[i]) continue;
              su += maps.u[i];
              sv += maps.v[i];
              ++count;
            }
          }
          const size_t o = (static_cast<size_t>(ty) * out.grid_w + tx) * f * f + sy * f + sx;
          if (count > 0) {
            out.u[o] = su / count / s;
            out.v[o] = sv / count / s;
            out.valid[o] = 1;
          }
        }
      }
    }
  }
  return out;
}

size_t TimeAwarePE::valid_count() const {
  return static_cast<size_t>(std::count(valid.begin(), valid.end(), uint8_t{1}));
}

TimeAwarePE make_time_aware_pe(const WarpMaps& maps, int tau, const MultiLevelPEConfig& cfg) {
  TimeAwarePE pe;
  pe.views = cfg.view_count();
  std::vector<PooledCoords> levels;
  for (int l = 0; l < cfg.levels(); ++l) levels.push_back(pool_coords_to_level(maps, cfg, l));
  pe.tokens = levels[0].grid_w * levels[0].grid_h;
  pe.tau.assign(pe.tokens, tau);
  pe.u.assign(static_cast<size_t>(pe.tokens) * pe.views, 0.0);
  pe.v.assign(static_cast<size_t>(pe.tokens) * pe.views, 0.0);
  pe.valid.assign(pe.tokens, 0);
  for (int t = 0; t < pe.tokens; ++t) {
    const double cu = levels[0].u[t], cv = levels[0].v[t];
    pe.valid[t] = levels[0].valid[t];
    for (int l = 0; l < cfg.levels(); ++l) {
      const int cells = levels[l].factor * levels[l].factor;
      for (int c = 0; c < cells; ++c) {
        const size_t src = static_cast<size_t>(t) * cells + c;
        const size_t dst = static_cast<size_t>(t) * pe.views + cfg.view_offset(l) + c;
        const bool ok = levels[l].valid[src] != 0;
        pe.u[dst] = ok ? levels[l].u[src] : cu;
        pe.v[dst] = ok ? levels[l].v[src] : cv;
      }
    }
  }
  return pe;
}

TimeAwarePE native_pe(int width, int height, int tau, const MultiLevelPEConfig& cfg) {
  return make_time_aware_pe(WarpMaps::identity(width, height), tau, cfg);
}

std::vector<int> CondTokenSet::assignments() const {
  std::vector<int> k;
  for (const auto& e : entries)
    if (e.source > 0) k.push_back(e.frame);
  return k;
}

CondTokenSet assemble_condition_set(const LatentClip& ref, std::span<const LatentClip> memories,
                                    std::span<const WarpMaps> ref_warps, std::span<const WarpMaps> memory_warps,
                                    std::span<const int> assignments, const MultiLevelPEConfig& cfg) {
  const int n = static_cast<int>(ref_warps.size());
  if (n < 1) throw std::invalid_argument("assemble_condition_set: need at least one target frame");
  if (ref.frames != 1) throw std::invalid_argument("assemble_condition_set: reference must be one latent frame");
  if (memories.size() != memory_warps.size() || memories.size() != assignments.size())
    throw std::invalid_argument("assemble_condition_set: memories, warps and assignments differ in length");
  for (size_t j = 0; j < assignments.size(); ++j) {
    if (assignments[j] < 1 || assignments[j] > n)
      throw std::out_of_range("assemble_condition_set: assignment k_" + std::to_string(j + 1) + " = " +
                              std::to_string(assignments[j]) + " outside [1, " + std::to_string(n) + "]");
    if (memories[j].tokens_per_frame() != ref.tokens_per_frame())
      throw std::invalid_argument("assemble_condition_set: memory grid differs from reference grid");
  }
  CondTokenSet set;
  set.target_frames = n;
  set.memory_count = static_cast<int>(memories.size());
  set.tokens_per_frame = ref.tokens_per_frame();
  for (int i = 0; i < n; ++i) set.entries.push_back({0, i + 1, make_time_aware_pe(ref_warps[i], i + 1, cfg)});
  for (size_t j = 0; j < memories.size(); ++j)
    set.entries.push_back(
        {static_cast<int>(j) + 1, assignments[j], make_time_aware_pe(memory_warps[j], assignments[j], cfg)});
  for (const auto& e : set.entries)
    if (e.pe.tokens != set.tokens_per_frame)
      throw std::invalid_argument("assemble_condition_set: warp map resolution does not match the latent grid");
  return set;
}

void RopeConfig::validate() const {
  if (head_dim < 16 || head_dim % 16 != 0)
    throw std::invalid_argument("rope: head_dim must be a positive multiple of 16 for the 1/4, 3/8, 3/8 split");
  if (!(theta_time > 1.0) || !(theta_space > 1.0)) throw std::invalid_argument("rope: theta must exceed 1");
  levels.validate(heads);
}

RopeTable build_rope_table(const TimeAwarePE& pe, const RopeConfig& cfg) {
  cfg.validate();
  if (pe.views != cfg.levels.view_count()) throw std::invalid_argument("rope: PE view count does not match config");
  RopeTable table;
  table.tokens = pe.tokens;
  table.heads = cfg.heads;
  table.pairs = cfg.head_dim / 2;
  const size_t n = static_cast<size_t>(table.tokens) * table.heads * table.pairs;
  table.cos.resize(n);
  table.sin.resize(n);

  // Frequency of every pair and the axis it reads.
  std::vector<double> freq(table.pairs);
  std::vector<int> axis(table.pairs);
  const int groups[3] = {cfg.time_dims() / 2, cfg.u_dims() / 2, cfg.v_dims() / 2};
  const double thetas[3] = {cfg.theta_time, cfg.theta_space, cfg.theta_space};
  int p = 0;
  for (int a = 0; a < 3; ++a) {
    for (int k = 0; k < groups[a]; ++k, ++p) {
      axis[p] = a;
      freq[p] = std::pow(thetas[a], -static_cast<double>(k) / groups[a]);
    }
  }

  for (int t = 0; t < pe.tokens; ++t) {
    for (int h = 0; h < cfg.heads; ++h) {
      const size_t view = static_cast<size_t>(t) * pe.views + cfg.levels.head_view[h];
      const double coord[3] = {static_cast<double>(pe.tau[t]), pe.u[view], pe.v[view]};
      const size_t base = (static_cast<size_t>(t) * cfg.heads + h) * table.pairs;
      for (int q = 0; q < table.pairs; ++q) {
        const double angle = coord[axis[q]] * freq[q];
        table.cos[base + q] = std::cos(angle);
        table.sin[base + q] = std::sin(angle);
      }
    }
  }
  return table;
}

RopeTable concat_rope_tables(std::span<const RopeTable> tables) {
  RopeTable out;
  if (tables.empty()) return out;
  out.heads = tables[0].heads;
  out.pairs = tables[0].pairs;
  for (const auto& t : tables) {
    if (t.heads != out.heads || t.pairs != out.pairs) throw std::invalid_argument("rope: incompatible tables");
    out.tokens += t.tokens;
    out.cos.insert(out.cos.end(), t.cos.begin(), t.cos.end());
    out.sin.insert(out.sin.end(), t.sin.begin(), t.sin.end());
  }
  return out;
}

}  // namespace ucm
