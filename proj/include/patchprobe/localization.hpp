#pragma once

#include <optional>
#include <string>
#include <vector>

#include "patchprobe/geometry.hpp"
#include "patchprobe/rng.hpp"

namespace patchprobe {

struct LocalizationConfig {
  double tau = 0.05;             // objectness floor for suspect boxes
  double model_threshold = 0.5;  // the detector's own filter
  int person_class = 0;
  double slot_offset = 30;       // cardinal displacement of the four side slots
  int patch_size = 80;

  // tau == 0 is admitted (the pilot sweep evaluates it); it floods the
  // candidate set and scores poorly, which is the point of the pilot.
  void validate() const;
};

// A suspect region: person-looking raw boxes whose objectness sits between
// tau and the model threshold, merged over the overlap graph.
struct CandidateBox {
  Box box;
  double peak_objectness = 0;  // max over merged members
  int member_count = 0;
};

inline const std::vector<std::string> kSlotOrder = {"center", "up", "down", "left", "right"};

struct PlacementSlot {
  std::string slot_id;                 // one of kSlotOrder
  Point origin;                        // top-left of the patch, post-clamp
  std::optional<Box> parent_candidate; // empty for non-candidate placements
  std::string parent_kind;             // "candidate" | "random-fallback" | "fixed-side"
};

// Selection: argmax class == person, tau <= objectness < model threshold.
// Merging: connected components of the IoU>0 overlap graph, each component
// union-boxed, peak objectness = max over members (checked against tau
// again, which the max makes trivially true). Sorted by descending peak with
// deterministic geometric tie-breaks.
std::vector<CandidateBox> find_candidates(const std::vector<RawBox>& raw,
                                          const LocalizationConfig& cfg);

// The five patch positions for a candidate: patch centered at the candidate
// center and shifted slot_offset px in each cardinal direction, clamped into
// the image. Fixed order: center, up, down, left, right.
std::vector<PlacementSlot> derive_slots(const CandidateBox& candidate,
                                        const LocalizationConfig& cfg, int image_size);

// Uniform over all integer top-left origins that keep the patch inside.
PlacementSlot fallback_slot(Prng& rng, const LocalizationConfig& cfg, int image_size);

}  // namespace patchprobe
