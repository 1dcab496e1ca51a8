#include "patchprobe/mock_detector.hpp"

#include <cstring>

#include "patchprobe/errors.hpp"

namespace patchprobe {

MockDetector::MockDetector(DetectorContract contract, std::vector<RawBox> default_script)
    : Detector(std::move(contract)), default_script_(std::move(default_script)) {
  for (const RawBox& r : default_script_)
    if (int(r.class_scores.size()) != contract_.class_count)
      throw UserError("mock: scripted class_scores length mismatch");
}

uint64_t MockDetector::fingerprint(const Image& image) {
  uint64_t h = 0xCBF29CE484222325ull;
  auto mix = [&h](uint64_t bits) {
    h ^= bits;
    h *= 0x100000001B3ull;
  };
  mix(uint64_t(image.h) << 32 | uint64_t(uint32_t(image.w)));
  for (double d : image.v) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    mix(bits);
  }
  return h;
}

void MockDetector::script(const Image& image, std::vector<RawBox> boxes) {
  for (const RawBox& r : boxes)
    if (int(r.class_scores.size()) != contract_.class_count)
      throw UserError("mock: scripted class_scores length mismatch");
  scripted_[fingerprint(image)] = std::move(boxes);
}

std::vector<RawBox> MockDetector::raw_boxes(const Image& image) const {
  check_image(image);
  auto it = scripted_.find(fingerprint(image));
  return it != scripted_.end() ? it->second : default_script_;
}

}  // namespace patchprobe
