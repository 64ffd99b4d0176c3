#include "mvdpp/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace mvdpp::img {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& path, const char* what) {
  throw std::runtime_error("png: " + std::string(what) + ": " + path);
}

void write_png(const std::string& path, int width, int height, int color_type,
               const std::vector<std::uint8_t>& bytes, int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "write error");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(bytes.data() + static_cast<size_t>(y) * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void read_png(const std::string& path, int expect_color_type, int channels,
              int& width, int& height, std::vector<std::uint8_t>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(path, "cannot open for reading");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "read error");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  int ct = png_get_color_type(png, info);
  int bd = png_get_bit_depth(png, info);
  if (bd == 16) png_set_strip_16(png);
  if (ct == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (ct == PNG_COLOR_TYPE_GRAY && bd < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (expect_color_type == PNG_COLOR_TYPE_RGB) {
    if (ct & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (ct == PNG_COLOR_TYPE_GRAY || ct == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  } else if (expect_color_type == PNG_COLOR_TYPE_GRAY) {
    if (ct & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (ct & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  bytes.resize(static_cast<size_t>(height) * width * channels);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y)
    rows[y] = bytes.data() + static_cast<size_t>(y) * width * channels;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
}

std::uint8_t to_byte(float v) {
  float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

void write_png_rgb(const std::string& path, const ImageRGB& im) {
  std::vector<std::uint8_t> bytes(im.data.size());
  for (size_t i = 0; i < im.data.size(); ++i) bytes[i] = to_byte(im.data[i]);
  write_png(path, im.width, im.height, PNG_COLOR_TYPE_RGB, bytes, 3);
}

ImageRGB read_png_rgb(const std::string& path) {
  ImageRGB im;
  std::vector<std::uint8_t> bytes;
  read_png(path, PNG_COLOR_TYPE_RGB, 3, im.width, im.height, bytes);
  im.data.resize(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) im.data[i] = bytes[i] / 255.0f;
  return im;
}

void write_png_mask(const std::string& path, const Mask& m) {
  std::vector<std::uint8_t> bytes(m.data.size());
  for (size_t i = 0; i < m.data.size(); ++i) bytes[i] = m.data[i] ? 255 : 0;
  write_png(path, m.width, m.height, PNG_COLOR_TYPE_GRAY, bytes, 1);
}

Mask read_png_mask(const std::string& path) {
  Mask m;
  std::vector<std::uint8_t> bytes;
  read_png(path, PNG_COLOR_TYPE_GRAY, 1, m.width, m.height, bytes);
  m.data.resize(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) m.data[i] = bytes[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace mvdpp::img
