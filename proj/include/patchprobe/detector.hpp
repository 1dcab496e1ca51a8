#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchprobe/geometry.hpp"
#include "patchprobe/image.hpp"

namespace patchprobe {

// What every pipeline stage is allowed to know about a detector.
struct DetectorContract {
  int class_count = 0;
  int person_class = 0;            // the class of interest
  double objectness_threshold = 0.5;  // the model's own filter
  int input_size = 0;              // square side, pixels
  double nms_iou = 0.45;
  std::vector<std::string> class_names;  // size class_count when provided

  void validate() const;
  std::string class_name(int id) const;
  int class_id(const std::string& name) const;  // -1 when unknown
};

struct LossTerms {
  double obj = 0, cls = 0, box = 0;
};

// Binds a loss query to one expected (or forbidden) object.
struct LossTarget {
  Box region;          // where the object should / shouldn't be
  int label = 0;
  bool want_present = true;
};

struct TermSet {
  bool obj = true, cls = true, box = true;

  double total(const LossTerms& t) const {
    return (obj ? t.obj : 0) + (cls ? t.cls : 0) + (box ? t.box : 0);
  }
};

struct LossGradient {
  LossTerms terms;
  Image grad;      // d(total)/d(pixel), restricted to the query rect
  PixelRect roi;
};

// Result of a max-objectness probe (the attack-side objective).
struct ObjProbe {
  double value = 0;      // max objectness over qualifying boxes, 0 if none
  bool found = false;
  int raw_index = -1;
  Image grad;            // d(value)/d(pixel) over the query rect
  PixelRect roi;
};

// The detector abstraction every other module talks to. detect() is
// implemented once on top of raw_boxes so that every backend, including the
// scripted mock, goes through the identical threshold+NMS pipeline.
class Detector {
 public:
  explicit Detector(DetectorContract contract);
  virtual ~Detector() = default;

  const DetectorContract& contract() const { return contract_; }

  // Full grid/proposal output before thresholding and NMS.
  virtual std::vector<RawBox> raw_boxes(const Image& image) const = 0;

  // Thresholded, NMS-suppressed detections.
  std::vector<Detection> detect(const Image& image) const;

  virtual bool differentiable() const { return false; }

  // Per-target detection-training losses and their pixel gradient over roi.
  // Throws on non-differentiable backends and on empty target lists.
  virtual LossGradient loss_and_gradient(const Image& image,
                                         const std::vector<LossTarget>& targets,
                                         const TermSet& terms, const PixelRect& roi) const;

  // Max objectness over raw boxes whose predicted box overlaps any of the
  // given regions with IoU > iou_floor, plus its pixel gradient over roi.
  virtual ObjProbe max_objectness(const Image& image, const std::vector<Box>& regions,
                                  double iou_floor, const PixelRect& roi) const;

  // Cheap digest of the weights; defense pipelines must leave it unchanged.
  virtual uint64_t weights_fingerprint() const { return 0; }

  void check_image(const Image& image) const;

 protected:
  DetectorContract contract_;
};

// Threshold + argmax labeling + class-aware NMS, exposed separately so tests
// can recompose the detect() pipeline from raw boxes independently.
std::vector<Detection> detections_from_raw(const std::vector<RawBox>& raw,
                                           const DetectorContract& contract);

}  // namespace patchprobe
