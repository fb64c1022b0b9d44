#include "ucm/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>

namespace ucm {

Image::Image(int width, int height, float fill)
    : width_(width), height_(height), data_(static_cast<size_t>(width) * height * 3, fill) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("image dimensions must be positive");
}

Eigen::Vector3f Image::pixel(int x, int y) const {
  const float* p = &data_[(static_cast<size_t>(y) * width_ + x) * 3];
  return {p[0], p[1], p[2]};
}

void Image::set_pixel(int x, int y, const Eigen::Vector3f& rgb) {
  float* p = &data_[(static_cast<size_t>(y) * width_ + x) * 3];
  p[0] = rgb[0];
  p[1] = rgb[1];
  p[2] = rgb[2];
}

Image Image::quantized() const {
  Image out = *this;
  for (float& v : out.data_) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
  return out;
}

size_t Mask::count() const {
  return static_cast<size_t>(std::count(bits.begin(), bits.end(), uint8_t{1}));
}

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_or_throw(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

// Writes rows of `bit_depth` samples; color_type is PNG_COLOR_TYPE_RGB or _GRAY.
void write_rows(const std::filesystem::path& path, int width, int height, int bit_depth,
                int color_type, std::vector<std::vector<uint8_t>>& rows) {
  FilePtr f = open_or_throw(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed for " + path.string());
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (auto& row : rows) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads a PNG expanded to 8-bit samples with the requested channel count.
std::vector<uint8_t> read_rows(const std::filesystem::path& path, int channels, int& width,
                               int& height) {
  FilePtr f = open_or_throw(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed for " + path.string());
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed reading " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const bool is_gray = (color_type & PNG_COLOR_MASK_COLOR) == 0;
  if (channels == 3 && is_gray) png_set_gray_to_rgb(png);
  if (channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  std::vector<uint8_t> data(static_cast<size_t>(width) * height * channels);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = data.data() + static_cast<size_t>(y) * width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return data;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  std::vector<std::vector<uint8_t>> rows(image.height(), std::vector<uint8_t>(image.width() * 3));
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c)
        rows[y][x * 3 + c] =
            static_cast<uint8_t>(std::lround(std::clamp(image.at(x, y, c), 0.0f, 1.0f) * 255.0f));
  write_rows(path, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB, rows);
}

Image read_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto bytes = read_rows(path, 3, w, h);
  Image image(w, h);
  for (size_t i = 0; i < bytes.size(); ++i) image.data()[i] = static_cast<float>(bytes[i]) / 255.0f;
  return image;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  const int row_bytes = (mask.width + 7) / 8;
  std::vector<std::vector<uint8_t>> rows(mask.height, std::vector<uint8_t>(row_bytes, 0));
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) rows[y][x / 8] |= static_cast<uint8_t>(0x80u >> (x % 8));
  write_rows(path, mask.width, mask.height, 1, PNG_COLOR_TYPE_GRAY, rows);
}

Mask read_mask_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto bytes = read_rows(path, 1, w, h);
  Mask mask(w, h);
  for (size_t i = 0; i < bytes.size(); ++i) mask.bits[i] = bytes[i] >= 128 ? 1 : 0;
  return mask;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(const unsigned char* b) {
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 | static_cast<uint32_t>(b[2]) << 16 |
         static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace

void write_depth(const std::filesystem::path& path, const DepthMap& depth) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os.write("UCMD", 4);
  put_u32(os, static_cast<uint32_t>(depth.width));
  put_u32(os, static_cast<uint32_t>(depth.height));
  put_u32(os, 0);
  for (size_t i = 0; i < depth.size(); ++i) put_u32(os, std::bit_cast<uint32_t>(depth.valid[i] ? depth.depth[i] : 0.0f));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

DepthMap read_depth(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  unsigned char header[16];
  if (!is.read(reinterpret_cast<char*>(header), 16) || std::memcmp(header, "UCMD", 4) != 0)
    throw std::runtime_error("not a depth raster: " + path.string());
  const uint32_t w = get_u32(header + 4), h = get_u32(header + 8);
  if (w == 0 || h == 0 || w > 1u << 15 || h > 1u << 15)
    throw std::runtime_error("bad depth raster size in " + path.string());
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 4);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw std::runtime_error("truncated depth raster: " + path.string());
  DepthMap d(static_cast<int>(w), static_cast<int>(h));
  for (uint32_t y = 0; y < h; ++y)
    for (uint32_t x = 0; x < w; ++x)
      d.set(static_cast<int>(x), static_cast<int>(y),
            std::bit_cast<float>(get_u32(&raw[(static_cast<size_t>(y) * w + x) * 4])));
  return d;
}

}  // namespace ucm
