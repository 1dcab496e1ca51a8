#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "patchprobe/attack.hpp"
#include "patchprobe/corpus.hpp"
#include "patchprobe/defense.hpp"
#include "patchprobe/sentinel.hpp"

namespace patchprobe {

struct LabeledVerdict {
  Verdict verdict;
  bool truth_adversarial = false;  // supplied by the pair manifest, never inferred
};

struct ConfusionCounts {
  long tp = 0, tn = 0, fp = 0, fn = 0;

  long total() const { return tp + tn + fp + fn; }
  // Zero-denominator quotients are reported as absent ("undefined"), never as
  // a silent 0 or 1.
  std::optional<double> precision() const;
  std::optional<double> recall() const;
};

ConfusionCounts confusion(const std::vector<LabeledVerdict>& labeled);

std::string ratio_str(const std::optional<double>& v);

// ---- pilot procedures ----

struct PilotScore {
  double tau = 0;
  long score = 0;
};

// Per-sample rubric; criteria can be switched off for the subset-rubric
// property test.
struct PilotRubric {
  bool candidate_near_attacked = true;  // a candidate touches a victim box
  bool no_candidate_near_clean = true;  // no candidate touches a non-attacked object
  bool tight_candidate = true;          // a candidate matches a victim box with IoU > 0.5
};

std::vector<PilotScore> pilot_tau(const std::vector<SamplePair>& samples,
                                  const std::vector<double>& taus, const Detector& detector,
                                  const LocalizationConfig& base,
                                  const PilotRubric& rubric = {});

struct PilotSizeCell {
  std::string kind;  // "canary" | "woodpecker"
  int size = 0;
  bool ok = false;
  double precision = 0;  // valid when ok
  std::string note;
};

struct PilotSizeResult {
  std::vector<PilotSizeCell> cells;
  int selected_canary_size = 0;
  int selected_woodpecker_size = 0;
};

struct PilotSizeConfig {
  std::vector<int> sizes;
  CanaryTrainConfig canary_base;
  WoodpeckerTrainConfig woodpecker_base;
  int placements_per_image = 1;
  bool randomize = true;
  uint64_t seed = 1;
};

// One short canary + woodpecker training per size, evaluated for Mode #1 /
// Mode #2 precision over the eval pairs; member failures are annotated and
// the table is still emitted.
PilotSizeResult pilot_size(const std::vector<SamplePair>& train_pairs,
                           const std::vector<SamplePair>& eval_pairs,
                           const PilotSizeConfig& cfg, const Detector& detector);

// ---- experiment orchestration ----

struct ExperimentConfig {
  std::filesystem::path detector_dir;
  std::filesystem::path pools_dir;
  std::filesystem::path pairs_dir;
  std::filesystem::path out_dir;
  std::vector<int> modes = {1, 2, 3};
  bool randomize = true;
  int placements_per_image = 1;
  LocalizationConfig loc;
  uint64_t seed = 0;
  json config_snapshot = json::object();
  bool quiet = true;
};

struct ModeOutcome {
  ConfusionCounts counts;
  double median_ms = 0;
};

struct ExperimentResult {
  std::map<int, ModeOutcome> modes;
  std::filesystem::path verdicts_path;
  std::filesystem::path confusion_path;
};

// Deterministic labeled evaluation run: per-image per-mode verdicts with
// shared per-image seeds, confusion tables, timing, and the Mode #3 union
// invariant asserted on every image.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Recompute confusion counts from a persisted verdicts file (reports carry no
// unexplained numbers).
std::map<int, ConfusionCounts> confusion_from_verdicts(const std::filesystem::path& verdicts);

void write_confusion_tsv(const std::filesystem::path& path,
                         const std::map<int, ModeOutcome>& modes,
                         const std::string& config_hash);

// ---- adaptive-attack experiment ----

struct AdaptiveConfig {
  std::vector<int> deps = {1, 2, 3, 4};
  AttackConfig attack;
  LocalizationConfig loc;
  uint64_t seed = 1;
};

struct DepOutcome {
  int dep = 0;
  std::string description;
  int scenes = 0;
  int hidden = 0;  // scenes where the adaptive patch hides every detected person
  int bypass = 0;  // hidden and the (randomized) defense draw does not alert
};

std::vector<DepOutcome> run_adaptive_experiment(const std::vector<Scene>& scenes,
                                                const PatchPool& pools, const Detector& detector,
                                                const AdaptiveConfig& cfg,
                                                std::map<int, AttackForgeResult>* forges = nullptr);

void write_adaptive_tsv(const std::filesystem::path& path, const std::vector<DepOutcome>& rows,
                        const std::string& config_hash);

// ---- report rendering ----

// Renders plots from whatever a run directory contains: confusion.tsv becomes
// precision/recall bars, *.trace.csv files become loss-trace lines,
// adaptive.tsv becomes bypass bars.
std::vector<std::filesystem::path> render_report(const std::filesystem::path& run_dir);

// trace csv helpers (step,total,per-term columns)
void write_attack_trace(const std::filesystem::path& path,
                        const std::vector<AttackTraceRow>& trace);
void write_canary_trace(const std::filesystem::path& path,
                        const std::vector<CanaryTraceRow>& trace);
void write_woodpecker_trace(const std::filesystem::path& path,
                            const std::vector<WoodpeckerTraceRow>& trace);

}  // namespace patchprobe
