#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glowflow/errors.hpp"
#include "glowflow/tensor.hpp"

// 8-bit PNG I/O (grayscale and RGB only; other depths rejected loudly) and
// simple grid/strip assembly for sample sheets.
namespace glow {

struct Image8 {
  int h = 0, w = 0, c = 0;  // c is 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;  // row-major, channels fastest

  std::size_t size() const { return static_cast<std::size_t>(h) * w * c; }
};

Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& img);

// Tiles images row-major into one sheet with a uniform gap (background 0).
Image8 make_grid(const std::vector<Image8>& tiles, int columns, int gap = 2);

// Maps a continuous [0,1) model-space tensor to an 8-bit image per sample.
template <typename T>
Image8 to_image8(const Tensor4<T>& x, int sample) {
  if (x.c() != 1 && x.c() != 3) {
    throw DataError("PNG output needs 1 or 3 channels, got " +
                    std::to_string(x.c()));
  }
  Image8 img;
  img.h = x.h();
  img.w = x.w();
  img.c = x.c();
  img.pixels.resize(img.size());
  std::size_t o = 0;
  for (int i = 0; i < x.h(); ++i)
    for (int j = 0; j < x.w(); ++j)
      for (int k = 0; k < x.c(); ++k) {
        int v = static_cast<int>(
            std::floor(static_cast<double>(x(sample, i, j, k)) * 256.0));
        if (v < 0) v = 0;
        if (v > 255) v = 255;
        img.pixels[o++] = static_cast<std::uint8_t>(v);
      }
  return img;
}

}  // namespace glow
