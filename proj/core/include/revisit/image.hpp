#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace revisit {

// 8-bit grayscale image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;

  GrayImage() = default;
  GrayImage(int w, int h, uint8_t fill = 0)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  uint8_t at(int x, int y) const {
    return data[static_cast<size_t>(y) * width + x];
  }
  uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }

  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
};

// Separable box filter of window (2*radius+1)^2 with replicated edges,
// rounding to nearest. radius = 0 returns the input unchanged.
GrayImage box_blur(const GrayImage& image, int radius);

// Binary PGM (P5, maxval 255). Malformed files raise Format errors naming the
// offending path; I/O failures raise Io errors.
GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& image);

}  // namespace revisit
