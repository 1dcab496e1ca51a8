#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "patchprobe/artifact_io.hpp"
#include "patchprobe/corpus.hpp"
#include "patchprobe/defense.hpp"
#include "patchprobe/detector.hpp"
#include "patchprobe/localization.hpp"

namespace patchprobe {

struct DeploymentPolicy {
  int mode = 3;  // 1 canary, 2 woodpecker, 3 both in sequence
  PatchPool pool;
  int placements_per_image = 1;
  bool randomize = true;
  uint64_t seed = 0;
  LocalizationConfig loc;

  void validate() const;
};

struct EvidenceItem {
  std::string kind;  // "canary-missing" | "recovered-object"
  std::string expectation;
  std::string observation;
};

struct PlacementRecord {
  std::string patch_id;
  std::string slot_id;
  Point origin;
  std::string parent;
};

struct Verdict {
  bool attacked = false;
  std::string mode_fired = "none";  // "canary" | "woodpecker" | "none"
  std::vector<EvidenceItem> evidence;
  std::vector<PlacementRecord> placements_used;
};

// Draws placements_per_image (patch, slot) pairs without replacement from the
// pool x slots cross product; the non-randomized mode takes the first pairs
// in (lexicographic pool key, slot order) sequence.
std::vector<std::pair<std::string, PlacementSlot>> sample_placements(
    const DeploymentPolicy& policy, const std::map<std::string, PatchBundle>& pool,
    const std::vector<PlacementSlot>& slots, Prng& rng);

// Mode #1: inject canaries at sampled candidate slots; alert when any canary
// is not detected as its class with IoU >= 0.5 at its placed rectangle.
Verdict canary_check(const Image& image, const DeploymentPolicy& policy,
                     const Detector& detector);

// Mode #2: alert when a new person-class detection appears after woodpecker
// injection (not explained by an existing person or by the injected patch
// rectangle itself).
Verdict woodpecker_check(const Image& image, const DeploymentPolicy& policy,
                         const Detector& detector);

// Mode #3: canary then woodpecker over one shared candidate computation;
// attacked = union, evidence concatenated.
Verdict combined_check(const Image& image, const DeploymentPolicy& policy,
                       const Detector& detector);

Verdict run_check(const Image& image, const DeploymentPolicy& policy, const Detector& detector);

// Check cores with explicit placements (content + position), used by the
// adaptive-attack evaluation where deployments are drawn from a fixed pool
// rather than from image candidates.
Verdict canary_check_with_placements(
    const Image& image, const std::vector<std::pair<PatchBundle, PlacementSlot>>& placements,
    const Detector& detector);
Verdict woodpecker_check_with_placements(
    const Image& image, const std::vector<std::pair<PatchBundle, PlacementSlot>>& placements,
    const Detector& detector);

// One structured text record per image; the evaluation kit and CLI both
// consume this format.
json verdict_to_json(const std::string& image_id, int mode, const Verdict& v);
Verdict verdict_from_json(const json& j);

}  // namespace patchprobe
