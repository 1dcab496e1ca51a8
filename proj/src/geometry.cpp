#include "patchprobe/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "patchprobe/errors.hpp"

namespace patchprobe {

bool Box::valid() const {
  return w > 0 && h > 0 && std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
         std::isfinite(h);
}

int RawBox::argmax_class() const {
  int best = 0;
  for (int i = 1; i < int(class_scores.size()); ++i)
    if (class_scores[i] > class_scores[best]) best = i;
  return best;
}

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw UserError("iou: degenerate box");
  double ix = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  double iy = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  if (ix <= 0 || iy <= 0) return 0.0;
  double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

Box union_box(const std::vector<Box>& boxes) {
  if (boxes.empty()) throw UserError("union_box: empty set");
  double x1 = boxes[0].x, y1 = boxes[0].y, x2 = boxes[0].x2(), y2 = boxes[0].y2();
  for (const Box& b : boxes) {
    if (!b.valid()) throw UserError("union_box: degenerate box");
    x1 = std::min(x1, b.x);
    y1 = std::min(y1, b.y);
    x2 = std::max(x2, b.x2());
    y2 = std::max(y2, b.y2());
  }
  return Box{x1, y1, x2 - x1, y2 - y1};
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw UserError("nms: iou_threshold must lie in (0,1]");
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.box.x != b.box.x) return a.box.x < b.box.x;
    if (a.box.y != b.box.y) return a.box.y < b.box.y;
    if (a.box.w != b.box.w) return a.box.w < b.box.w;
    if (a.box.h != b.box.h) return a.box.h < b.box.h;
    return a.label < b.label;
  });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.label == d.label && iou(k.box, d.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

Point clamp_placement(Point slot_origin, int patch_size, int image_size) {
  if (patch_size > image_size)
    throw UserError("clamp_placement: patch larger than image");
  double lim = double(image_size - patch_size);
  return Point{std::clamp(slot_origin.x, 0.0, lim), std::clamp(slot_origin.y, 0.0, lim)};
}

Box clip_box(const Box& b, int image_size) {
  double x1 = std::max(0.0, b.x), y1 = std::max(0.0, b.y);
  double x2 = std::min(double(image_size), b.x2()), y2 = std::min(double(image_size), b.y2());
  return Box{x1, y1, x2 - x1, y2 - y1};
}

PixelRect raster_rect(Point origin, int patch_size, int image_size) {
  if (patch_size > image_size) throw UserError("raster_rect: patch larger than image");
  int x = int(std::lround(origin.x));
  int y = int(std::lround(origin.y));
  x = std::clamp(x, 0, image_size - patch_size);
  y = std::clamp(y, 0, image_size - patch_size);
  return PixelRect{x, y, patch_size, patch_size};
}

}  // namespace patchprobe
