#include "patchprobe/detector.hpp"

#include <algorithm>

#include "patchprobe/errors.hpp"

namespace patchprobe {

void DetectorContract::validate() const {
  if (class_count <= 0) throw UserError("contract: class_count must be positive");
  if (person_class < 0 || person_class >= class_count)
    throw UserError("contract: person_class outside class range");
  if (!(objectness_threshold > 0.0 && objectness_threshold < 1.0))
    throw UserError("contract: objectness_threshold must lie in (0,1)");
  if (input_size <= 0) throw UserError("contract: input_size must be positive");
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw UserError("contract: nms_iou must lie in (0,1]");
  if (!class_names.empty() && int(class_names.size()) != class_count)
    throw UserError("contract: class_names size mismatch");
}

std::string DetectorContract::class_name(int id) const {
  if (id >= 0 && id < int(class_names.size())) return class_names[id];
  return "class" + std::to_string(id);
}

int DetectorContract::class_id(const std::string& name) const {
  auto it = std::find(class_names.begin(), class_names.end(), name);
  return it == class_names.end() ? -1 : int(it - class_names.begin());
}

Detector::Detector(DetectorContract contract) : contract_(std::move(contract)) {
  contract_.validate();
}

void Detector::check_image(const Image& image) const {
  if (image.h != contract_.input_size || image.w != contract_.input_size || image.c != 3)
    throw UserError("detector: wrong image shape (" + std::to_string(image.h) + "x" +
                    std::to_string(image.w) + "x" + std::to_string(image.c) + ", expected " +
                    std::to_string(contract_.input_size) + "x" +
                    std::to_string(contract_.input_size) + "x3)");
}

std::vector<Detection> detections_from_raw(const std::vector<RawBox>& raw,
                                           const DetectorContract& contract) {
  std::vector<Detection> dets;
  for (const RawBox& r : raw) {
    if (r.objectness < contract.objectness_threshold) continue;
    Detection d;
    d.box = r.box;
    d.objectness = r.objectness;
    d.label = r.argmax_class();
    d.confidence = r.objectness * r.class_scores[d.label];
    dets.push_back(d);
  }
  return nms(std::move(dets), contract.nms_iou);
}

std::vector<Detection> Detector::detect(const Image& image) const {
  return detections_from_raw(raw_boxes(image), contract_);
}

LossGradient Detector::loss_and_gradient(const Image&, const std::vector<LossTarget>&,
                                         const TermSet&, const PixelRect&) const {
  throw UserError("non-differentiable backend");
}

ObjProbe Detector::max_objectness(const Image&, const std::vector<Box>&, double,
                                  const PixelRect&) const {
  throw UserError("non-differentiable backend");
}

}  // namespace patchprobe
