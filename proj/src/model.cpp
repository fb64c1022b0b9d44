#include "ucm/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ucm {

RopeConfig ModelConfig::rope() const {
  RopeConfig r;
  r.heads = heads;
  r.head_dim = head_dim();
  r.theta_time = rope_theta_time;
  r.theta_space = rope_theta_space;
  r.levels = MultiLevelPEConfig::standard(heads, patch);
  return r;
}

void ModelConfig::validate() const {
  if (latent_dim < 1 || width < 1 || depth < 0 || heads < 1 || ffn_mult < 1 || grid_h < 1 || grid_w < 1 ||
      patch < 1 || classes < 1 || context_tokens < 1)
    throw std::invalid_argument("ModelConfig: sizes must be positive");
  if (width % heads) throw std::invalid_argument("ModelConfig: width must be divisible by heads");
  rope().validate();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"latent_dim", c.latent_dim}, {"width", c.width},
       {"depth", c.depth},           {"heads", c.heads},
       {"ffn_mult", c.ffn_mult},     {"grid_h", c.grid_h},
       {"grid_w", c.grid_w},         {"patch", c.patch},
       {"classes", c.classes},       {"context_tokens", c.context_tokens},
       {"rope_theta_time", c.rope_theta_time}, {"rope_theta_space", c.rope_theta_space}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.width = j.value("width", d.width);
  c.depth = j.value("depth", d.depth);
  c.heads = j.value("heads", d.heads);
  c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
  c.grid_h = j.value("grid_h", d.grid_h);
  c.grid_w = j.value("grid_w", d.grid_w);
  c.patch = j.value("patch", d.patch);
  c.classes = j.value("classes", d.classes);
  c.context_tokens = j.value("context_tokens", d.context_tokens);
  c.rope_theta_time = j.value("rope_theta_time", d.rope_theta_time);
  c.rope_theta_space = j.value("rope_theta_space", d.rope_theta_space);
}

namespace {

std::string block_name(int b, const char* leaf) { return "blocks." + std::to_string(b) + "." + leaf; }

void init_normal(Param<float>& p, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> g(0.0, stddev);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<float>(g(rng));
}

void add_linear(ParamStore<float>& ps, const std::string& name, int in, int out, std::mt19937_64& rng, bool zero) {
  auto& w = ps.add(name + ".w", in, out, true);
  if (!zero) init_normal(w, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  ps.add(name + ".b", 1, out, false);
}

}  // namespace

ParamStore<float> init_model_params(const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const int c = cfg.width;
  ParamStore<float> ps;
  add_linear(ps, "embed.in", cfg.latent_dim, c, rng, false);
  init_normal(ps.add("embed.mask", 1, c, true), rng, 1.0);
  init_normal(ps.add("embed.clean_bias", 1, c, false), rng, 0.5);
  add_linear(ps, "time.fc1", c, c, rng, false);
  add_linear(ps, "time.fc2", c, c, rng, false);
  init_normal(ps.add("class.embed", (cfg.classes + 1) * cfg.context_tokens, c, false), rng, 0.5);
  for (int b = 0; b < cfg.depth; ++b) {
    add_linear(ps, block_name(b, "mod"), c, 6 * c, rng, true);
    add_linear(ps, block_name(b, "attn.qkv"), c, 3 * c, rng, false);
    add_linear(ps, block_name(b, "attn.out"), c, c, rng, false);
    add_linear(ps, block_name(b, "cross.q"), c, c, rng, false);
    add_linear(ps, block_name(b, "cross.kv"), c, 2 * c, rng, false);
    add_linear(ps, block_name(b, "cross.out"), c, c, rng, false);
    add_linear(ps, block_name(b, "ffn.fc1"), c, cfg.ffn_mult * c, rng, false);
    add_linear(ps, block_name(b, "ffn.fc2"), cfg.ffn_mult * c, c, rng, false);
  }
  add_linear(ps, "final.mod", c, 2 * c, rng, true);
  add_linear(ps, "final.out", c, cfg.latent_dim, rng, true);
  add_linear(ps, "final.skip", c, cfg.latent_dim, rng, true);
  return ps;
}

RowMatrix<double> timestep_embedding(double t, int dim) {
  RowMatrix<double> e(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * i / half);
    e(0, i) = std::cos(t * 1000.0 * f);
    e(0, half + i) = std::sin(t * 1000.0 * f);
  }
  if (dim % 2) e(0, dim - 1) = 0.0;
  return e;
}

StreamLayout build_stream_layout(const ModelInput& in, const ModelConfig& cfg) {
  const int p = cfg.tokens_per_frame();
  const int n = in.frames;
  const int s = static_cast<int>(in.sources.size());
  if (n < 1 || in.noisy.rows() != static_cast<Eigen::Index>(n) * p || in.noisy.cols() != cfg.latent_dim)
    throw std::invalid_argument("model input: noisy latents do not match frames × tokens × latent_dim");
  if (s < 1 || in.source_mask.size() != in.sources.size())
    throw std::invalid_argument("model input: need a reference source and one mask per source");
  for (int i = 0; i < s; ++i)
    if (in.sources[i].rows() != p || in.sources[i].cols() != cfg.latent_dim || in.source_mask[i].rows() != p ||
        in.source_mask[i].cols() != 1)
      throw std::invalid_argument("model input: source " + std::to_string(i) + " has the wrong shape");
  if (in.cond.target_frames != n || in.cond.tokens_per_frame != p || in.cond.memory_count != s - 1)
    throw std::invalid_argument("model input: condition set does not match frames/sources");

  const RopeConfig rope = cfg.rope();
  const int wpx = cfg.grid_w * cfg.patch, hpx = cfg.grid_h * cfg.patch;
  StreamLayout L;
  L.frames = n;
  L.tokens_per_frame = p;
  L.sources = s;

  std::vector<RopeTable> tables;
  for (int i = 0; i < n; ++i) tables.push_back(build_rope_table(native_pe(wpx, hpx, i + 1, rope.levels), rope));
  L.noisy_rope = std::make_shared<RopeTable>(concat_rope_tables(tables));
  tables.clear();
  for (int i = 0; i < s; ++i) tables.push_back(build_rope_table(native_pe(wpx, hpx, 0, rope.levels), rope));
  L.clean_native_rope = std::make_shared<RopeTable>(concat_rope_tables(tables));
  tables.clear();

  std::vector<uint8_t> key_valid(static_cast<size_t>(n) * p, 1);
  for (const auto& e : in.cond.entries) {
    if (e.source < 0 || e.source >= s) throw std::out_of_range("model input: entry source out of range");
    tables.push_back(build_rope_table(e.pe, rope));
    for (int t = 0; t < p; ++t) {
      L.entry_rows.push_back(e.source * p + t);
      key_valid.push_back(e.pe.valid[t]);
    }
  }
  L.entry_rope = std::make_shared<RopeTable>(concat_rope_tables(tables));

  const auto assignments = in.cond.assignments();
  BlockMask full = build_dual_stream_mask(n, s - 1, assignments, p);
  BlockMask noisy = full.top_rows(n);
  noisy.key_valid = std::move(key_valid);
  L.noisy_mask = std::make_shared<BlockMask>(std::move(noisy));

  BlockMask clean = BlockMask::uniform(s, s, p, false);
  for (int i = 0; i < s; ++i) clean.set(i, i, true);
  L.clean_mask = std::make_shared<BlockMask>(std::move(clean));

  const int nq = n * p, sq = s * p, k = cfg.context_tokens;
  L.noisy_context_mask = std::make_shared<BlockMask>(BlockMask::full(std::span<const int>(&nq, 1), std::span<const int>(&k, 1)));
  L.clean_context_mask = std::make_shared<BlockMask>(BlockMask::full(std::span<const int>(&sq, 1), std::span<const int>(&k, 1)));
  return L;
}

namespace {

template <typename T>
struct Binder {
  Tape<T>& tape;
  ParamStore<T>& params;
  bool train;
  typename Tape<T>::Id operator()(const std::string& name) {
    Param<T>& p = params.at(name);
    return train ? tape.param(p) : tape.constant(p.value);
  }
};

}  // namespace

template <typename T>
StreamIds<T> dit_block_forward(Tape<T>& tape, ParamStore<T>& params, int block, const StreamLayout& L,
                               StreamIds<T> in, typename Tape<T>::Id mod, typename Tape<T>::Id context,
                               const ModelConfig& cfg, bool train) {
  using Id = typename Tape<T>::Id;
  Binder<T> bind{tape, params, train};
  auto P = [&](const char* leaf) { return bind(block_name(block, leaf)); };
  const int c = cfg.width;

  const Id mods = tape.linear(mod, P("mod.w"), P("mod.b"));
  auto chunk = [&](int i) { return tape.slice_cols(mods, i * c, c); };
  const Id shift1 = chunk(0), scale1 = chunk(1), gate1 = chunk(2);
  const Id shift2 = chunk(3), scale2 = chunk(4), gate2 = chunk(5);

  // Self attention. Noisy queries see noisy keys under native PEs and the
  // permitted clean entries under their warped PEs; clean sources attend
  // within themselves under native PEs.
  const Id qkv_w = P("attn.qkv.w"), qkv_b = P("attn.qkv.b");
  const Id out_w = P("attn.out.w"), out_b = P("attn.out.b");
  const Id hn = tape.modulate(tape.layer_norm(in.noisy), shift1, scale1);
  const Id cn = tape.layer_norm(in.clean);
  const Id qkv_h = tape.linear(hn, qkv_w, qkv_b);
  const Id qkv_c = tape.linear(cn, qkv_w, qkv_b);
  const Id q_h = tape.rope(tape.split_cols(qkv_h, 3, 0), L.noisy_rope);
  const Id k_h = tape.rope(tape.split_cols(qkv_h, 3, 1), L.noisy_rope);
  const Id v_h = tape.split_cols(qkv_h, 3, 2);
  const Id q_c = tape.split_cols(qkv_c, 3, 0);
  const Id k_c = tape.split_cols(qkv_c, 3, 1);
  const Id v_c = tape.split_cols(qkv_c, 3, 2);
  const Id k_entries = tape.rope(tape.gather_rows(k_c, L.entry_rows), L.entry_rope);
  const Id v_entries = tape.gather_rows(v_c, L.entry_rows);
  const Id att_h = tape.attention(q_h, tape.concat_rows({k_h, k_entries}), tape.concat_rows({v_h, v_entries}),
                                  L.noisy_mask, cfg.heads);
  const Id att_c = tape.attention(tape.rope(q_c, L.clean_native_rope), tape.rope(k_c, L.clean_native_rope), v_c,
                                  L.clean_mask, cfg.heads);
  Id h = tape.add(in.noisy, tape.mul_row(tape.linear(att_h, out_w, out_b), gate1));
  Id cl = tape.add(in.clean, tape.linear(att_c, out_w, out_b));

  // Cross attention to the class context.
  const Id xq_w = P("cross.q.w"), xq_b = P("cross.q.b"), xo_w = P("cross.out.w"), xo_b = P("cross.out.b");
  const Id kv = tape.linear(context, P("cross.kv.w"), P("cross.kv.b"));
  const Id xk = tape.split_cols(kv, 2, 0), xv = tape.split_cols(kv, 2, 1);
  auto cross = [&](Id x, const std::shared_ptr<const BlockMask>& mask) {
    const Id q = tape.linear(tape.layer_norm(x), xq_w, xq_b);
    return tape.add(x, tape.linear(tape.attention(q, xk, xv, mask, cfg.heads), xo_w, xo_b));
  };
  h = cross(h, L.noisy_context_mask);
  cl = cross(cl, L.clean_context_mask);

  // Feed-forward.
  const Id f1_w = P("ffn.fc1.w"), f1_b = P("ffn.fc1.b"), f2_w = P("ffn.fc2.w"), f2_b = P("ffn.fc2.b");
  auto ffn = [&](Id x) { return tape.linear(tape.gelu(tape.linear(x, f1_w, f1_b)), f2_w, f2_b); };
  h = tape.add(h, tape.mul_row(ffn(tape.modulate(tape.layer_norm(h), shift2, scale2)), gate2));
  cl = tape.add(cl, ffn(tape.layer_norm(cl)));
  return {h, cl};
}

template <typename T>
ForwardResult<T> model_forward(Tape<T>& tape, ParamStore<T>& params, const ModelConfig& cfg, const ModelInput& in,
                               bool train) {
  using Id = typename Tape<T>::Id;
  using Mat = RowMatrix<T>;
  if (in.class_id < 0 || in.class_id > cfg.classes) throw std::out_of_range("model input: class id out of range");
  const StreamLayout L = build_stream_layout(in, cfg);
  Binder<T> P{tape, params, train};
  const int p = cfg.tokens_per_frame();

  Mat clean_lat(static_cast<Eigen::Index>(L.sources) * p, cfg.latent_dim);
  Mat clean_mask(static_cast<Eigen::Index>(L.sources) * p, 1);
  for (int s = 0; s < L.sources; ++s) {
    clean_lat.middleRows(s * p, p) = in.sources[s].template cast<T>();
    clean_mask.middleRows(s * p, p) = in.source_mask[s].template cast<T>();
  }

  const Id in_w = P("embed.in.w"), in_b = P("embed.in.b");
  const Id noisy_lat = tape.constant(in.noisy.template cast<T>());
  const Id noisy = tape.linear(noisy_lat, in_w, in_b);
  Id clean = tape.linear(tape.constant(std::move(clean_lat)), in_w, in_b);
  clean = tape.add(clean, tape.matmul(tape.constant(std::move(clean_mask)), P("embed.mask")));
  clean = tape.add_row(clean, P("embed.clean_bias"));

  const Id temb = tape.constant(timestep_embedding(in.t, cfg.width).template cast<T>());
  const Id t1 = tape.silu(tape.linear(temb, P("time.fc1.w"), P("time.fc1.b")));
  const Id mod = tape.silu(tape.linear(t1, P("time.fc2.w"), P("time.fc2.b")));
  const Id context = tape.slice_rows(P("class.embed"), in.class_id * cfg.context_tokens, cfg.context_tokens);

  StreamIds<T> streams{noisy, clean};
  for (int b = 0; b < cfg.depth; ++b) streams = dit_block_forward(tape, params, b, L, streams, mod, context, cfg, train);

  const Id fm = tape.linear(mod, P("final.mod.w"), P("final.mod.b"));
  const Id shift = tape.slice_cols(fm, 0, cfg.width), scl = tape.slice_cols(fm, cfg.width, cfg.width);
  const Id head = tape.linear(tape.modulate(tape.layer_norm(streams.noisy), shift, scl), P("final.out.w"),
                              P("final.out.b"));
  // Timestep-dependent per-channel skip of the noisy latent around the narrower trunk.
  const Id skip = tape.mul_row(noisy_lat, tape.linear(mod, P("final.skip.w"), P("final.skip.b")));
  return {tape.add(head, skip), streams};
}

RowMatrix<float> predict_velocity(ParamStore<float>& params, const ModelConfig& cfg, const ModelInput& in) {
  Tape<float> tape;
  const auto r = model_forward(tape, params, cfg, in, false);
  return tape.value(r.velocity);
}

template StreamIds<float> dit_block_forward(Tape<float>&, ParamStore<float>&, int, const StreamLayout&,
                                            StreamIds<float>, int, int, const ModelConfig&, bool);
template StreamIds<double> dit_block_forward(Tape<double>&, ParamStore<double>&, int, const StreamLayout&,
                                             StreamIds<double>, int, int, const ModelConfig&, bool);
template ForwardResult<float> model_forward(Tape<float>&, ParamStore<float>&, const ModelConfig&, const ModelInput&,
                                            bool);
template ForwardResult<double> model_forward(Tape<double>&, ParamStore<double>&, const ModelConfig&,
                                             const ModelInput&, bool);

}  // namespace ucm
