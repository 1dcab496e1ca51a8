#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "patchprobe/image.hpp"

namespace patchprobe {

// Minimal deterministic chart rendering; no text rendering dependencies, just
// an embedded 3x5 glyph set. Enough for precision/recall bars, loss traces
// and bypass counts.

struct PlotSeries {
  std::string label;
  std::vector<double> values;
};

void plot_bars(const std::filesystem::path& path, const std::string& title,
               const std::vector<std::string>& labels, const std::vector<double>& values,
               double vmax, const std::string& config_hash);

void plot_lines(const std::filesystem::path& path, const std::string& title,
                const std::vector<PlotSeries>& series, const std::string& config_hash);

// Exposed for tests.
void draw_text(Image& canvas, int x, int y, const std::string& text, int scale, double r,
               double g, double b);

}  // namespace patchprobe
