#pragma once

#include <string>
#include <utility>
#include <vector>

#include "patchprobe/corpus.hpp"
#include "patchprobe/defense.hpp"
#include "patchprobe/detector.hpp"
#include "patchprobe/localization.hpp"

namespace patchprobe {

struct AttackConfig {
  double learning_rate = 0.03;
  int max_iters = 1000;
  double mu = 0.01;        // weight of L_regu
  double tv_weight = 1.0;  // L_regu = tv_weight * total_variation
  int batch = 0;           // scenes per step, 0 = all
  uint64_t seed = 1;
  int patch_size = 80;
  double person_iou_floor = 0.3;  // raw boxes count as "person-overlapping" above this
  int convergence_window = 50;
  double convergence_rel_tol = 1e-4;
  int jobs = 0;

  void validate() const;
};

// Anisotropic total variation: sum of absolute horizontal and vertical
// neighbor differences over all channels.
double total_variation(const Image& patch);
Image total_variation_gradient(const Image& patch);

struct AttackTraceRow {
  long step = 0;
  double total = 0;
  double detect_term = 0;  // mean max person objectness (bare deployment)
  double deploy_term = 0;  // defense-aware sum, 0 for the plain attack
  double regu_term = 0;
};

struct AttackForgeResult {
  PatchBundle bundle;
  std::vector<AttackTraceRow> trace;
};

// The known deployment sets C and W of the defense, as (content, placement)
// pairs at fixed positions.
struct DeploymentKnowledge {
  std::vector<std::pair<PatchBundle, PlacementSlot>> canary_set;
  std::vector<std::pair<PatchBundle, PlacementSlot>> woodpecker_set;

  void validate() const;  // all bundles share one patch size
};

// Baseline hiding attack: minimize E[max person objectness of (x + patch)]
// + mu * L_regu, patch pasted on every person proxy.
AttackForgeResult forge_attack_patch(const std::vector<Scene>& scenes, const Detector& detector,
                                     const AttackConfig& cfg);

// Defense-aware variant against canaries: additionally keep every known
// canary deployment detected (full obj+cls+box detection loss). An empty
// canary set degenerates to the plain attack objective.
AttackForgeResult forge_adaptive_vs_canary(const std::vector<Scene>& scenes,
                                           const Detector& detector,
                                           const DeploymentKnowledge& knowledge,
                                           const AttackConfig& cfg);

// Defense-aware variant against woodpeckers: keep the person hidden under
// every known woodpecker injection (sum over W of max person objectness).
AttackForgeResult forge_adaptive_vs_woodpecker(const std::vector<Scene>& scenes,
                                               const Detector& detector,
                                               const DeploymentKnowledge& knowledge,
                                               const AttackConfig& cfg);

// Fixed side positions used by the deployment strategies: patch origin at 1/8
// (left) or 5/8 (right) of the image width, vertically centered.
PlacementSlot side_slot(const std::string& side, int patch_size, int image_size);

// Dep #1: boat canary, left. Dep #2: {boat, elephant, zebra} x {left, right}.
// Dep #3: one woodpecker, left. Dep #4: one woodpecker x {left, right}.
DeploymentKnowledge dep_strategy_pool(int id, const PatchPool& pools,
                                      const DetectorContract& contract, int image_size);

std::string dep_strategy_description(int id);

// Paste the attack patch on every person proxy at the standard attack
// position; returns the composited image (and the rects when requested).
Image apply_attack_to_scene(const Scene& scene, const Image& patch, int person_class,
                            std::vector<PixelRect>* rects = nullptr);

// Per-scene objective pieces, exposed for decomposition checks: the bare
// hiding term, the canary detection-loss sum, and the woodpecker-deployed
// hiding sum, all evaluated at the given patch.
double attack_detect_loss(const Scene& scene, const Image& patch, const Detector& detector,
                          double person_iou_floor);
double canary_deploy_loss(const Scene& scene, const Image& patch, const Detector& detector,
                          const DeploymentKnowledge& knowledge);
double woodpecker_deploy_loss(const Scene& scene, const Image& patch, const Detector& detector,
                              const DeploymentKnowledge& knowledge, double person_iou_floor);

}  // namespace patchprobe
