#include "patchprobe/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "patchprobe/errors.hpp"

namespace patchprobe {

int l0_pixel_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw UserError("l0_pixel_diff: shape mismatch");
  int n = 0;
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x) {
      for (int ch = 0; ch < a.c; ++ch) {
        if (a.at(y, x, ch) != b.at(y, x, ch)) {
          ++n;
          break;
        }
      }
    }
  return n;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint16_t quant_sample(double v, int maxval) {
  double q = std::round(std::clamp(v, 0.0, 1.0) * maxval);
  return uint16_t(q);
}

}  // namespace

void quantize(Image& img, int bit_depth) {
  const int maxval = bit_depth == 16 ? 65535 : 255;
  for (double& v : img.v) v = double(quant_sample(v, maxval)) / maxval;
}

void write_png(const std::string& path, const Image& img, int bit_depth,
               const std::map<std::string, std::string>& text) {
  if (img.c != 3) throw UserError("write_png: only 3-channel images supported");
  if (bit_depth != 8 && bit_depth != 16) throw UserError("write_png: bit depth must be 8 or 16");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw UserError("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw InternalError("write_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw InternalError("write_png: libpng error writing " + path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.w, img.h, bit_depth, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);

  std::vector<png_text> chunks;
  chunks.reserve(text.size());
  for (const auto& [k, v] : text) {
    png_text t{};
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = const_cast<char*>(k.c_str());
    t.text = const_cast<char*>(v.c_str());
    t.text_length = v.size();
    chunks.push_back(t);
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), int(chunks.size()));

  png_write_info(png, info);

  const int maxval = bit_depth == 16 ? 65535 : 255;
  if (bit_depth == 8) {
    std::vector<uint8_t> row(size_t(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x)
        for (int ch = 0; ch < 3; ++ch)
          row[size_t(x) * 3 + ch] = uint8_t(quant_sample(img.at(y, x, ch), maxval));
      png_write_row(png, row.data());
    }
  } else {
    // PNG stores 16-bit samples big-endian.
    std::vector<uint8_t> row(size_t(img.w) * 6);
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          uint16_t s = quant_sample(img.at(y, x, ch), maxval);
          row[(size_t(x) * 3 + ch) * 2] = uint8_t(s >> 8);
          row[(size_t(x) * 3 + ch) * 2 + 1] = uint8_t(s & 0xFF);
        }
      png_write_row(png, row.data());
    }
  }
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path, std::map<std::string, std::string>* text) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw UserError("read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw InternalError("read_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw UserError("read_png: not a valid PNG: " + path);
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int depth = png_get_bit_depth(png, info);
  int color = png_get_color_type(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);

  Image img(int(h), int(w), 3);
  const int maxval = depth == 16 ? 65535 : 255;
  std::vector<uint8_t> row(size_t(w) * 3 * (depth == 16 ? 2 : 1));
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        uint32_t s = depth == 16
                         ? uint32_t(row[(size_t(x) * 3 + ch) * 2]) << 8 |
                               row[(size_t(x) * 3 + ch) * 2 + 1]
                         : row[size_t(x) * 3 + ch];
        img.at(int(y), int(x), ch) = double(s) / maxval;
      }
  }

  if (text) {
    png_textp chunks = nullptr;
    int n = 0;
    png_get_text(png, info, &chunks, &n);
    for (int i = 0; i < n; ++i) (*text)[chunks[i].key] = chunks[i].text ? chunks[i].text : "";
  }

  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace patchprobe
