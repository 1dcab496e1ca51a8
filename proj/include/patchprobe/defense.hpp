#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "patchprobe/corpus.hpp"
#include "patchprobe/detector.hpp"
#include "patchprobe/localization.hpp"

namespace patchprobe {

struct CanaryTrainConfig {
  double lambda = 2.0;           // benign-loss weight
  int init_class = 4;            // one of the canary content classes
  std::string slot_id = "center";
  int patch_size = 80;
  double learning_rate = 0.03;
  int max_iters = 300;
  uint64_t seed = 1;
  int batch = 0;                 // pairs per step, 0 = all
  int convergence_window = 50;
  double convergence_rel_tol = 1e-4;
  int jobs = 0;
  LocalizationConfig loc;

  void validate() const;
};

struct WoodpeckerTrainConfig {
  int patch_size = 80;
  double learning_rate = 0.03;
  int max_iters = 300;
  uint64_t seed = 1;
  int batch = 0;
  int convergence_window = 50;
  double convergence_rel_tol = 1e-4;
  int jobs = 0;
  LocalizationConfig loc;

  void validate() const;
};

// detect() output of a benign scene, pre-collected as woodpecker optimization
// targets.
struct BenignObjectRecord {
  std::vector<Detection> objects;
};

struct CanaryTraceRow {
  long step = 0;
  double objective = 0;  // lambda * l_benign - l_adv
  double l_benign = 0;
  double l_adv = 0;
};

struct CanaryForgeResult {
  PatchBundle bundle;
  std::vector<CanaryTraceRow> trace;
  std::vector<PixelRect> pair_rects;  // fixed canary rectangle per pair (benign side)
};

// Per-step hook, called with the patch state the step's losses were evaluated
// at. Lets tests recompute the objective from independent loss queries.
using CanaryStepObserver = std::function<void(long step, const Image& patch,
                                              const CanaryTraceRow& row)>;

// Canary optimization: descend lambda * L_benign(canary) - L_adv(canary) on
// the patch pixels, obj+cls terms only, canary placed at the configured slot
// of the top benign-side candidate of each pair (random fallback when a pair
// has none).
CanaryForgeResult train_canary(const std::vector<SamplePair>& pairs,
                               const CanaryTrainConfig& cfg, const Detector& detector,
                               const CanaryStepObserver& observer = nullptr);

struct WoodpeckerTraceRow {
  long step = 0;
  double total = 0;  // l_benign + l_adv, unit weights
  double l_benign = 0;
  double l_adv = 0;
};

struct WoodpeckerForgeResult {
  PatchBundle bundle;
  std::vector<WoodpeckerTraceRow> trace;
};

std::vector<BenignObjectRecord> collect_benign_objects(const std::vector<Scene>& scenes,
                                                       const Detector& detector);

// Woodpecker optimization: random-noise init, want_present obj+cls+box loss
// of every recorded benign object, evaluated on both images of each pair
// with the woodpecker injected at a sampled candidate slot (adversarial-side
// candidates).
WoodpeckerForgeResult train_woodpecker(const std::vector<SamplePair>& pairs,
                                       const std::vector<BenignObjectRecord>& records,
                                       const WoodpeckerTrainConfig& cfg,
                                       const Detector& detector);

struct PatchPool {
  std::map<std::string, PatchBundle> canaries;     // key: canary/<class>/<slot>
  std::map<std::string, PatchBundle> woodpeckers;  // key: woodpecker/<index>

  bool empty() const { return canaries.empty() && woodpeckers.empty(); }
};

std::string canary_key(const DetectorContract& contract, int class_id,
                       const std::string& slot_id);

// One train_canary run per (class, slot); any member failure fails the pool
// with a partial-results report in the exception message.
PatchPool train_canary_pool(const std::vector<SamplePair>& pairs, const std::vector<int>& classes,
                            const std::vector<std::string>& slots, const CanaryTrainConfig& base,
                            const Detector& detector,
                            std::map<std::string, double>* final_losses = nullptr);

// `count` woodpeckers differing only by seed.
PatchPool train_woodpecker_pool(const std::vector<SamplePair>& pairs,
                                const std::vector<BenignObjectRecord>& records, int count,
                                const WoodpeckerTrainConfig& base, const Detector& detector,
                                std::map<std::string, double>* final_losses = nullptr);

struct PoolSaveInfo {
  std::string detector_hash;
  std::string pairs_hash;
  std::string config_hash;
  std::map<std::string, double> final_losses;
};

void save_patch_pool(const std::filesystem::path& dir, const PatchPool& pool,
                     const PoolSaveInfo& info);
PatchPool load_patch_pool(const std::filesystem::path& dir, PoolSaveInfo* info = nullptr);

// Merge two pools (canaries from one, woodpeckers from another, etc.).
PatchPool merge_pools(const PatchPool& a, const PatchPool& b);

}  // namespace patchprobe
