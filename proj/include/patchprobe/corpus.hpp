#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchprobe/detector.hpp"
#include "patchprobe/geometry.hpp"
#include "patchprobe/image.hpp"
#include "patchprobe/rng.hpp"

namespace patchprobe {

// Canonical label space of the synthetic world. Class 0 is the class of
// interest ("person" proxy), class 1 a benign distractor, classes 2..6 the
// canary content palette.
inline const std::vector<std::string> kDefaultClassNames = {
    "person", "block", "zebra", "elephant", "boat", "cow", "toaster"};

struct GroundTruthObject {
  Box box;
  int class_id = 0;
};

struct Scene {
  Image image;
  std::vector<GroundTruthObject> ground_truth;
};

struct SceneConfig {
  int image_size = 96;
  int min_objects = 1, max_objects = 3;
  int min_persons = 1;                       // persons guaranteed per scene
  std::vector<int> class_palette = {1, 2, 3, 4, 5, 6};  // classes for non-person slots
  double person_w_min = 16, person_w_max = 24;
  double person_h_min = 40, person_h_max = 60;
  double object_min = 18, object_max = 32;   // non-person glyph side range
  double background_noise = 0.03;
  // Occlusion augmentation for detector-training corpora: unlabeled texture
  // blocks pasted on persons (at the patch position) and on background, so
  // that plain occlusion does not hide objects and plain texture does not
  // spawn them.
  double occluder_on_person_prob = 0.0;
  double occluder_on_background_prob = 0.0;
  int occluder_size = 24;

  void validate() const;
};

// Procedural per-class texture, deterministic in the rng stream. Also used as
// the canary "stock image" initializer.
Image render_class_glyph(int class_id, int w, int h, Prng& rng);

// Fixed stock rendering of a class at a given square size (seeded by class).
Image stock_class_image(int class_id, int size);

// Deterministic synthetic scene with exact ground truth.
Scene synth_scene(uint64_t seed, const SceneConfig& cfg);

std::vector<Scene> synth_scenes(uint64_t seed, const SceneConfig& cfg, int count);

// Opaque overwrite of the patch rectangle (continuous pixel values pass
// through untouched, so d(loss)/d(patch) equals the image gradient on the
// rectangle). The origin is rasterized with raster_rect.
Image apply_patch(const Image& image, const Image& patch, Point origin);

enum class PatchKind { canary, woodpecker, attack, adaptive };
std::string to_string(PatchKind k);
PatchKind patch_kind_from_string(const std::string& s);

struct PatchBundle {
  Image pixels;  // S x S x 3 in [0,1]
  PatchKind kind = PatchKind::attack;
  int target_class = -1;     // canary class id, -1 when not applicable
  std::string slot_id;       // training slot binding, "" when not applicable
  uint64_t seed = 0;
  std::string config_hash;   // hash of the training config that produced it
  std::string id;            // canonical pool key, e.g. "canary/boat/center"

  int size() const { return pixels.w; }
};

struct SamplePair {
  Scene benign;
  Scene adversarial;  // same ground truth; image differs only inside attack rects
  std::string attack_patch_id;
  std::vector<Box> victim_boxes;       // person boxes hidden by the attack
  std::vector<PixelRect> attack_rects;
  std::string id;
};

// True when some detection matches the ground-truth box: same label and
// IoU >= iou_min.
bool object_detected(const std::vector<Detection>& dets, const Box& truth, int class_id,
                     double iou_min = 0.5);

// Center of the attack patch on a victim: horizontally centered, one third of
// the object height from the top.
Point attack_origin_for(const Box& victim, int patch_size);

struct BuildPairsOptions {
  int max_pairs = 0;  // 0 = keep all successful pairs
};

// Pastes the attack patch on every person of every scene, keeps the pairs
// where at least one detected person got hidden. The patch is quantized to
// the 8-bit grid first so persisted pairs reload bit-exactly.
std::vector<SamplePair> build_pairs(const std::vector<Scene>& benign_scenes,
                                    const PatchBundle& attack_patch, const Detector& detector,
                                    const BuildPairsOptions& opts = {});

// ---- persistence ----

void save_scenes(const std::filesystem::path& dir, const std::vector<Scene>& scenes,
                 const std::string& cfg_hash);
std::vector<Scene> load_scenes(const std::filesystem::path& dir);

void save_patch_bundle(const std::filesystem::path& dir, const PatchBundle& bundle);
PatchBundle load_patch_bundle(const std::filesystem::path& dir);

void save_pairs(const std::filesystem::path& dir, const std::vector<SamplePair>& pairs,
                const std::string& cfg_hash, int patch_size);
// Re-verifies the image-difference invariant (adversarial == benign outside
// the attack rectangles); never trusted from disk.
std::vector<SamplePair> load_pairs(const std::filesystem::path& dir);

// Re-checks the detector-dependent half of the pair invariant: every victim
// is detected in the benign image and undetected in the adversarial one.
void verify_pairs_with_detector(const std::vector<SamplePair>& pairs, const Detector& detector);

uint64_t scene_fingerprint(const Scene& s);

}  // namespace patchprobe
