#pragma once

#include "ucm/geometry.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ucm {

/// RGB image, row-major HWC, values nominally in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  size_t pixel_count() const { return static_cast<size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y, int c) { return data_[(static_cast<size_t>(y) * width_ + x) * 3 + c]; }
  float at(int x, int y, int c) const { return data_[(static_cast<size_t>(y) * width_ + x) * 3 + c]; }

  Eigen::Vector3f pixel(int x, int y) const;
  void set_pixel(int x, int y, const Eigen::Vector3f& rgb);

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  /// Rounds every value to the nearest multiple of 1/255 after clamping.
  Image quantized() const;

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Binary mask, row-major.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> bits;

  Mask() = default;
  Mask(int w, int h, bool fill = false)
      : width(w), height(h), bits(static_cast<size_t>(w) * h, fill ? 1 : 0) {}
  bool at(int x, int y) const { return bits[static_cast<size_t>(y) * width + x] != 0; }
  size_t count() const;
};

/// 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// 1-bit grayscale PNG.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);

/// Depth raster: 16-byte header ("UCMD", u32 width, u32 height, u32 reserved)
/// then little-endian f32 row-major values. Invalid pixels are stored as 0.
void write_depth(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth(const std::filesystem::path& path);

}  // namespace ucm
