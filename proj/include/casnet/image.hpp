#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace casnet {

// Float RGB image, row-major H×W×3, values nominally in [-1, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// 8-bit RGB raster used for figures.
struct Rgb8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Rgb8() = default;
  Rgb8(int h, int w, std::uint8_t fill = 255)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  void set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (y < 0 || x < 0 || y >= height || x >= width) return;
    auto* p = &data[(static_cast<std::size_t>(y) * width + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

// [-1,1] -> [0,255] with rounding and clamping.
std::uint8_t to_byte(float v);
float from_byte(std::uint8_t b);

Rgb8 quantize(const Image& img);
Image dequantize(const Rgb8& img);

void write_png(const std::filesystem::path& path, const Rgb8& img);
void write_png(const std::filesystem::path& path, const Image& img);
Rgb8 read_png_rgb8(const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

}  // namespace casnet
