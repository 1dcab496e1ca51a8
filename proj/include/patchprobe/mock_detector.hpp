#pragma once

#include <map>

#include "patchprobe/detector.hpp"

namespace patchprobe {

// Declarative fixture: maps image fingerprints to scripted RawBox lists, with
// an optional default script for unmatched images. Lets geometry and verdict
// logic be tested without any learning. Not differentiable.
class MockDetector : public Detector {
 public:
  MockDetector(DetectorContract contract, std::vector<RawBox> default_script = {});

  static uint64_t fingerprint(const Image& image);

  void script(const Image& image, std::vector<RawBox> boxes);

  std::vector<RawBox> raw_boxes(const Image& image) const override;

 private:
  std::vector<RawBox> default_script_;
  std::map<uint64_t, std::vector<RawBox>> scripted_;
};

}  // namespace patchprobe
