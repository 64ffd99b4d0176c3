#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvdpp::img {

// Planar-free HxWx3 float image, values in [0,1].
struct ImageRGB {
  int height = 0, width = 0;
  std::vector<float> data;  // size H*W*3, row-major, interleaved

  static ImageRGB filled(int h, int w, float r, float g, float b) {
    ImageRGB im;
    im.height = h;
    im.width = w;
    im.data.resize(static_cast<size_t>(h) * w * 3);
    for (int i = 0; i < h * w; ++i) {
      im.data[3 * i + 0] = r;
      im.data[3 * i + 1] = g;
      im.data[3 * i + 2] = b;
    }
    return im;
  }

  float& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

// HxW binary mask stored as bytes (0 or 1).
struct Mask {
  int height = 0, width = 0;
  std::vector<std::uint8_t> data;

  static Mask zeros(int h, int w) {
    Mask m;
    m.height = h;
    m.width = w;
    m.data.assign(static_cast<size_t>(h) * w, 0);
    return m;
  }

  std::uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

// 8-bit PNG I/O (RGB for images, grayscale for masks).
void write_png_rgb(const std::string& path, const ImageRGB& im);
ImageRGB read_png_rgb(const std::string& path);
void write_png_mask(const std::string& path, const Mask& m);
Mask read_png_mask(const std::string& path);

}  // namespace mvdpp::img
