#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace patchprobe {

// Dense HWC image, double precision, values nominally in [0, 1]. Double
// precision is deliberate: patch optimization is validated against central
// finite differences, which float32 cannot support at the required tolerance.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<double> v;

  Image() = default;
  Image(int h_, int w_, int c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), v(size_t(h_) * w_ * c_, fill) {}

  double& at(int y, int x, int ch) { return v[(size_t(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const { return v[(size_t(y) * w + x) * c + ch]; }

  bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
  size_t size() const { return v.size(); }
};

// Number of pixels (not channel samples) where a and b differ.
int l0_pixel_diff(const Image& a, const Image& b);

// PNG I/O via libpng. Values are quantized to the stored bit depth with
// round-half-up; reading maps sample/maxval back to [0,1]. Text pairs go into
// tEXt chunks; every artifact image carries the config hash that produced it.
void write_png(const std::string& path, const Image& img, int bit_depth,
               const std::map<std::string, std::string>& text = {});
Image read_png(const std::string& path,
               std::map<std::string, std::string>* text = nullptr);

// Quantize in place to the grid representable at bit_depth (8 or 16); after
// this, a PNG round-trip reproduces the image bit-exactly.
void quantize(Image& img, int bit_depth);

}  // namespace patchprobe
