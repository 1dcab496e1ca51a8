#include "patchprobe/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "patchprobe/errors.hpp"

namespace patchprobe {

namespace {

// 3x5 glyphs, rows packed top-to-bottom, 3 bits per row.
uint16_t glyph(char c) {
  auto rows = [](int r0, int r1, int r2, int r3, int r4) {
    return uint16_t(r0 << 12 | r1 << 9 | r2 << 6 | r3 << 3 | r4);
  };
  switch (std::toupper(static_cast<unsigned char>(c))) {
    case '0': return rows(0b111, 0b101, 0b101, 0b101, 0b111);
    case '1': return rows(0b010, 0b110, 0b010, 0b010, 0b111);
    case '2': return rows(0b111, 0b001, 0b111, 0b100, 0b111);
    case '3': return rows(0b111, 0b001, 0b111, 0b001, 0b111);
    case '4': return rows(0b101, 0b101, 0b111, 0b001, 0b001);
    case '5': return rows(0b111, 0b100, 0b111, 0b001, 0b111);
    case '6': return rows(0b111, 0b100, 0b111, 0b101, 0b111);
    case '7': return rows(0b111, 0b001, 0b001, 0b010, 0b010);
    case '8': return rows(0b111, 0b101, 0b111, 0b101, 0b111);
    case '9': return rows(0b111, 0b101, 0b111, 0b001, 0b111);
    case 'A': return rows(0b010, 0b101, 0b111, 0b101, 0b101);
    case 'B': return rows(0b110, 0b101, 0b110, 0b101, 0b110);
    case 'C': return rows(0b011, 0b100, 0b100, 0b100, 0b011);
    case 'D': return rows(0b110, 0b101, 0b101, 0b101, 0b110);
    case 'E': return rows(0b111, 0b100, 0b110, 0b100, 0b111);
    case 'F': return rows(0b111, 0b100, 0b110, 0b100, 0b100);
    case 'G': return rows(0b011, 0b100, 0b101, 0b101, 0b011);
    case 'H': return rows(0b101, 0b101, 0b111, 0b101, 0b101);
    case 'I': return rows(0b111, 0b010, 0b010, 0b010, 0b111);
    case 'J': return rows(0b001, 0b001, 0b001, 0b101, 0b010);
    case 'K': return rows(0b101, 0b110, 0b100, 0b110, 0b101);
    case 'L': return rows(0b100, 0b100, 0b100, 0b100, 0b111);
    case 'M': return rows(0b101, 0b111, 0b111, 0b101, 0b101);
    case 'N': return rows(0b110, 0b101, 0b101, 0b101, 0b101);
    case 'O': return rows(0b010, 0b101, 0b101, 0b101, 0b010);
    case 'P': return rows(0b110, 0b101, 0b110, 0b100, 0b100);
    case 'Q': return rows(0b010, 0b101, 0b101, 0b110, 0b011);
    case 'R': return rows(0b110, 0b101, 0b110, 0b110, 0b101);
    case 'S': return rows(0b011, 0b100, 0b010, 0b001, 0b110);
    case 'T': return rows(0b111, 0b010, 0b010, 0b010, 0b010);
    case 'U': return rows(0b101, 0b101, 0b101, 0b101, 0b111);
    case 'V': return rows(0b101, 0b101, 0b101, 0b101, 0b010);
    case 'W': return rows(0b101, 0b101, 0b111, 0b111, 0b101);
    case 'X': return rows(0b101, 0b101, 0b010, 0b101, 0b101);
    case 'Y': return rows(0b101, 0b101, 0b010, 0b010, 0b010);
    case 'Z': return rows(0b111, 0b001, 0b010, 0b100, 0b111);
    case '.': return rows(0b000, 0b000, 0b000, 0b000, 0b010);
    case ',': return rows(0b000, 0b000, 0b000, 0b010, 0b100);
    case '-': return rows(0b000, 0b000, 0b111, 0b000, 0b000);
    case '_': return rows(0b000, 0b000, 0b000, 0b000, 0b111);
    case '%': return rows(0b101, 0b001, 0b010, 0b100, 0b101);
    case '/': return rows(0b001, 0b001, 0b010, 0b100, 0b100);
    case ':': return rows(0b000, 0b010, 0b000, 0b010, 0b000);
    case '#': return rows(0b101, 0b111, 0b101, 0b111, 0b101);
    case '(': return rows(0b001, 0b010, 0b010, 0b010, 0b001);
    case ')': return rows(0b100, 0b010, 0b010, 0b010, 0b100);
    case '=': return rows(0b000, 0b111, 0b000, 0b111, 0b000);
    case '+': return rows(0b000, 0b010, 0b111, 0b010, 0b000);
    default: return 0;  // space and unknown
  }
}

void put_px(Image& c, int x, int y, double r, double g, double b) {
  if (x < 0 || y < 0 || x >= c.w || y >= c.h) return;
  c.at(y, x, 0) = r;
  c.at(y, x, 1) = g;
  c.at(y, x, 2) = b;
}

void fill(Image& c, int x0, int y0, int w, int h, double r, double g, double b) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) put_px(c, x, y, r, g, b);
}

Image new_canvas(int w, int h) {
  Image c(h, w, 3, 1.0);
  return c;
}

struct Color {
  double r, g, b;
};

const Color kPalette[] = {{0.12, 0.35, 0.72}, {0.82, 0.35, 0.10}, {0.10, 0.55, 0.25},
                          {0.55, 0.15, 0.55}, {0.75, 0.60, 0.05}, {0.15, 0.60, 0.60}};

}  // namespace

void draw_text(Image& canvas, int x, int y, const std::string& text, int scale, double r,
               double g, double b) {
  int cx = x;
  for (char ch : text) {
    uint16_t gbits = glyph(ch);
    for (int row = 0; row < 5; ++row)
      for (int col = 0; col < 3; ++col)
        if (gbits >> (12 - row * 3 + 2 - col) & 1)
          fill(canvas, cx + col * scale, y + row * scale, scale, scale, r, g, b);
    cx += 4 * scale;
  }
}

void plot_bars(const std::filesystem::path& path, const std::string& title,
               const std::vector<std::string>& labels, const std::vector<double>& values,
               double vmax, const std::string& config_hash) {
  if (labels.size() != values.size()) throw UserError("plot_bars: label/value size mismatch");
  if (values.empty()) throw UserError("plot_bars: nothing to plot");
  const int W = 640, H = 360, ml = 56, mr = 16, mt = 36, mb = 56;
  Image c = new_canvas(W, H);
  draw_text(c, ml, 10, title, 2, 0.1, 0.1, 0.1);

  const int px0 = ml, px1 = W - mr, py0 = mt, py1 = H - mb;
  if (vmax <= 0) vmax = 1.0;
  // Gridlines and y labels at quarters.
  for (int q = 0; q <= 4; ++q) {
    int y = py1 - q * (py1 - py0) / 4;
    for (int x = px0; x < px1; x += 2) put_px(c, x, y, 0.85, 0.85, 0.85);
    char lbl[16];
    std::snprintf(lbl, sizeof lbl, "%.2f", vmax * q / 4.0);
    draw_text(c, 8, y - 5, lbl, 2, 0.3, 0.3, 0.3);
  }

  const int n = int(values.size());
  const int span = (px1 - px0) / n;
  for (int i = 0; i < n; ++i) {
    double v = std::clamp(values[i], 0.0, vmax);
    int bh = int(std::lround((py1 - py0) * v / vmax));
    int bw = std::max(6, span * 3 / 5);
    int bx = px0 + i * span + (span - bw) / 2;
    const Color& col = kPalette[i % 6];
    fill(c, bx, py1 - bh, bw, bh, col.r, col.g, col.b);
    char vl[16];
    std::snprintf(vl, sizeof vl, "%.3f", values[i]);
    draw_text(c, bx - 4, py1 - bh - 14, vl, 2, 0.15, 0.15, 0.15);
    draw_text(c, px0 + i * span + 2, py1 + 8, labels[i].substr(0, size_t(span / 8)), 2, 0.1, 0.1,
              0.1);
  }
  // Axes.
  fill(c, px0 - 1, py0, 1, py1 - py0 + 1, 0.2, 0.2, 0.2);
  fill(c, px0 - 1, py1, px1 - px0 + 1, 1, 0.2, 0.2, 0.2);

  std::filesystem::create_directories(path.parent_path());
  write_png(path.string(), c, 8, {{"config_hash", config_hash}});
}

void plot_lines(const std::filesystem::path& path, const std::string& title,
                const std::vector<PlotSeries>& series, const std::string& config_hash) {
  if (series.empty()) throw UserError("plot_lines: nothing to plot");
  const int W = 640, H = 360, ml = 56, mr = 16, mt = 36, mb = 36;
  Image c = new_canvas(W, H);
  draw_text(c, ml, 10, title, 2, 0.1, 0.1, 0.1);

  double lo = 1e300, hi = -1e300;
  size_t maxn = 0;
  for (const auto& s : series) {
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    maxn = std::max(maxn, s.values.size());
  }
  if (maxn == 0) throw UserError("plot_lines: empty series");
  if (hi <= lo) hi = lo + 1;
  double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  const int px0 = ml, px1 = W - mr, py0 = mt, py1 = H - mb;
  for (int q = 0; q <= 4; ++q) {
    int y = py1 - q * (py1 - py0) / 4;
    for (int x = px0; x < px1; x += 2) put_px(c, x, y, 0.85, 0.85, 0.85);
    char lbl[24];
    std::snprintf(lbl, sizeof lbl, "%.3g", lo + (hi - lo) * q / 4.0);
    draw_text(c, 4, y - 5, lbl, 2, 0.3, 0.3, 0.3);
  }

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& vals = series[si].values;
    const Color& col = kPalette[si % 6];
    for (size_t i = 0; i + 1 < vals.size(); ++i) {
      double x0 = px0 + double(i) / std::max<size_t>(1, maxn - 1) * (px1 - px0);
      double x1 = px0 + double(i + 1) / std::max<size_t>(1, maxn - 1) * (px1 - px0);
      double y0 = py1 - (vals[i] - lo) / (hi - lo) * (py1 - py0);
      double y1 = py1 - (vals[i + 1] - lo) / (hi - lo) * (py1 - py0);
      int steps = std::max(1, int(std::abs(x1 - x0) + std::abs(y1 - y0)));
      for (int s = 0; s <= steps; ++s) {
        double t = double(s) / steps;
        put_px(c, int(std::lround(x0 + t * (x1 - x0))), int(std::lround(y0 + t * (y1 - y0))),
               col.r, col.g, col.b);
      }
    }
    draw_text(c, px1 - 150, py0 + 4 + int(si) * 14, series[si].label.substr(0, 18), 2, col.r,
              col.g, col.b);
  }
  fill(c, px0 - 1, py0, 1, py1 - py0 + 1, 0.2, 0.2, 0.2);
  fill(c, px0 - 1, py1, px1 - px0 + 1, 1, 0.2, 0.2, 0.2);

  std::filesystem::create_directories(path.parent_path());
  write_png(path.string(), c, 8, {{"config_hash", config_hash}});
}

}  // namespace patchprobe
