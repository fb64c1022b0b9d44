#include "ucm/codec.hpp"

#include "ucm/geometry.hpp"

#include <Eigen/QR>

#include <random>
#include <stdexcept>
#include <string>

namespace ucm {

void CodecConfig::validate() const {
  if (spatial_stride < 1 || temporal_stride < 1) throw std::invalid_argument("codec: strides must be >= 1");
  if (channels != input_dim())
    throw std::invalid_argument("codec: channels must equal r*s*s*3 = " + std::to_string(input_dim()));
}

Codec::Codec(const CodecConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int n = cfg_.input_dim();
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(n, cfg_.channels);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  projection_ = (qr.householderQ() * Eigen::MatrixXd::Identity(n, cfg_.channels)).cast<float>();
}

LatentClip Codec::encode(const std::vector<Image>& frames) const {
  if (frames.empty()) throw std::invalid_argument("codec: no frames to encode");
  const int s = cfg_.spatial_stride, r = cfg_.temporal_stride;
  const int w = frames[0].width(), h = frames[0].height();
  for (const auto& f : frames)
    if (f.width() != w || f.height() != h) throw std::invalid_argument("codec: frames differ in size");
  if (w % s != 0 || h % s != 0)
    throw std::invalid_argument("codec: frame size " + std::to_string(w) + "x" + std::to_string(h) +
                                " not divisible by stride " + std::to_string(s));
  const int t = static_cast<int>(frames.size());
  if ((t - 1) % r != 0)
    throw std::invalid_argument("codec: " + std::to_string(t) + " frames do not form latent groups of " +
                                std::to_string(r));
  const auto groups = latent_frame_groups(t, r);
  const int gw = w / s, gh = h / s, n = static_cast<int>(groups.size());
  LatentClip out(n, gh, gw, cfg_.channels);
  Eigen::MatrixXf patches(static_cast<Eigen::Index>(n) * gh * gw, cfg_.input_dim());
  for (int g = 0; g < n; ++g) {
    const auto [begin, end] = groups[g];
    for (int ty = 0; ty < gh; ++ty)
      for (int tx = 0; tx < gw; ++tx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(g) * gh + ty) * gw + tx;
        for (int slot = 0; slot < r; ++slot) {
          const Image& f = frames[end - begin == 1 ? begin : begin + slot];
          int col = slot * s * s * 3;
          for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
              for (int c = 0; c < 3; ++c) patches(row, col++) = f.at(tx * s + x, ty * s + y, c);
        }
      }
  }
  out.tokens() = patches * projection_;
  return out;
}

LatentClip Codec::encode_frame(const Image& frame) const { return encode({frame}); }

std::vector<Image> Codec::decode(const LatentClip& latent) const {
  const int s = cfg_.spatial_stride, r = cfg_.temporal_stride;
  if (latent.channels != cfg_.channels) throw std::invalid_argument("codec: latent channel count mismatch");
  if (latent.frames < 1) throw std::invalid_argument("codec: empty latent");
  const int gw = latent.grid_w, gh = latent.grid_h, n = latent.frames;
  const Eigen::MatrixXf patches = latent.tokens() * projection_.transpose();
  std::vector<Image> frames(video_frames(n), Image(gw * s, gh * s));
  for (int g = 0; g < n; ++g) {
    const bool single = g == 0;
    for (int ty = 0; ty < gh; ++ty)
      for (int tx = 0; tx < gw; ++tx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(g) * gh + ty) * gw + tx;
        for (int slot = 0; slot < r; ++slot) {
          Image& f = frames[single ? 0 : 1 + (g - 1) * r + slot];
          const float weight = single ? 1.0f / r : 1.0f;
          int col = slot * s * s * 3;
          for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
              for (int c = 0; c < 3; ++c) f.at(tx * s + x, ty * s + y, c) += weight * patches(row, col++);
        }
      }
  }
  return frames;
}

}  // namespace ucm
