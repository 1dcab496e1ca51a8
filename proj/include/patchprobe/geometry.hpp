#pragma once

#include <vector>

namespace patchprobe {

struct Point {
  double x = 0, y = 0;
};

// Axis-aligned box in model-input pixel space, top-left origin. Coordinates
// are continuous; rasterization happens only when a patch is composited.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }
  double area() const { return w * h; }
  bool valid() const;

  bool operator==(const Box&) const = default;
};

// One detector grid/proposal output before thresholding and NMS.
struct RawBox {
  Box box;
  double objectness = 0;                // in [0,1]
  std::vector<double> class_scores;     // length = detector class count, each in [0,1]

  int argmax_class() const;
};

// A box that survived the objectness filter and NMS.
struct Detection {
  Box box;
  double objectness = 0;
  int label = 0;        // argmax class
  double confidence = 0;  // objectness * class_scores[label]
};

// Intersection-over-union. Symmetric, 0 for disjoint boxes, 1 for identical.
// Degenerate boxes (w or h <= 0, or non-finite coords) are rejected.
double iou(const Box& a, const Box& b);

// Minimal axis-aligned box enclosing all inputs. Empty input rejected.
Box union_box(const std::vector<Box>& boxes);

// Greedy class-aware NMS, descending confidence, deterministic tie-break by
// (confidence desc, x asc, y asc, w asc, h asc, label asc). A detection is
// suppressed when its IoU with an already kept same-class detection reaches
// the threshold. iou_threshold must lie in (0, 1].
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

// Minimal translation that puts a patch_size x patch_size square with the
// given top-left origin fully inside an image_size x image_size image.
// Idempotent; rejects patches larger than the image.
Point clamp_placement(Point slot_origin, int patch_size, int image_size);

// Integer pixel rectangle, used wherever continuous coordinates have been
// rasterized (patch compositing, gradient regions of interest).
struct PixelRect {
  int x = 0, y = 0, w = 0, h = 0;

  Box to_box() const { return Box{double(x), double(y), double(w), double(h)}; }
  bool operator==(const PixelRect&) const = default;
};

// The single rasterization rule shared by patch compositing and gradient
// slicing: round the continuous origin, then clamp so the patch stays inside.
PixelRect raster_rect(Point origin, int patch_size, int image_size);

// Intersection of a box with the image rectangle. The result can be
// degenerate (invalid()) when the box lies fully outside.
Box clip_box(const Box& b, int image_size);

}  // namespace patchprobe
