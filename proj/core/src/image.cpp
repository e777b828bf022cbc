#include "glowflow/image.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace glow {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image8 read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 ||
      png_sig_cmp(header, 0, 8) != 0) {
    throw DataError("not a PNG file: " + path);
  }

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);

  if (depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("only 8-bit PNGs are supported: " + path + " has depth " +
                    std::to_string(depth));
  }
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("PNG must be grayscale or RGB after stripping alpha: " +
                    path);
  }

  Image8 img;
  img.h = static_cast<int>(h);
  img.w = static_cast<int>(w);
  img.c = channels;
  img.pixels.resize(img.size());
  std::vector<png_bytep> rows(h);
  for (png_uint_32 i = 0; i < h; ++i) {
    rows[i] = img.pixels.data() + static_cast<std::size_t>(i) * w * channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const Image8& img) {
  if (img.c != 1 && img.c != 3) {
    throw DataError("write_png: image must have 1 or 3 channels");
  }
  if (img.pixels.size() != img.size()) {
    throw DataError("write_png: pixel buffer does not match dims");
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open for writing: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w),
               static_cast<png_uint_32>(img.h), 8,
               img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.h);
  for (int i = 0; i < img.h; ++i) {
    rows[i] = const_cast<png_bytep>(
        img.pixels.data() + static_cast<std::size_t>(i) * img.w * img.c);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image8 make_grid(const std::vector<Image8>& tiles, int columns, int gap) {
  if (tiles.empty()) throw DataError("make_grid: no tiles");
  if (columns < 1) throw ArgError("make_grid: columns must be >= 1");
  const int th = tiles[0].h, tw = tiles[0].w, tc = tiles[0].c;
  for (const Image8& t : tiles) {
    if (t.h != th || t.w != tw || t.c != tc) {
      throw DataError("make_grid: tiles must share dims");
    }
  }
  const int count = static_cast<int>(tiles.size());
  const int cols = std::min(columns, count);
  const int rows = (count + cols - 1) / cols;
  Image8 sheet;
  sheet.c = tc;
  sheet.h = rows * th + (rows - 1) * gap;
  sheet.w = cols * tw + (cols - 1) * gap;
  sheet.pixels.assign(sheet.size(), 0);
  for (int t = 0; t < count; ++t) {
    const int r = t / cols, q = t % cols;
    const int oy = r * (th + gap), ox = q * (tw + gap);
    for (int i = 0; i < th; ++i) {
      const std::uint8_t* src =
          tiles[t].pixels.data() + static_cast<std::size_t>(i) * tw * tc;
      std::uint8_t* dst = sheet.pixels.data() +
                          (static_cast<std::size_t>(oy + i) * sheet.w + ox) * tc;
      std::copy(src, src + static_cast<std::size_t>(tw) * tc, dst);
    }
  }
  return sheet;
}

}  // namespace glow
