#include <doctest.h>

#include <filesystem>
#include <set>

#include "patchprobe/corpus.hpp"
#include "patchprobe/errors.hpp"
#include "patchprobe/toy_detector.hpp"
#include "support/test_support.hpp"

using namespace patchprobe;
using namespace patchprobe::testing;

namespace {

std::filesystem::path tmp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

SceneConfig small_scene_config() {
  SceneConfig cfg;
  cfg.image_size = 96;
  cfg.min_objects = 1;
  cfg.max_objects = 3;
  cfg.min_persons = 1;
  return cfg;
}

// Rule detector for pair-building mechanics: "detects" a person at each probe
// box when the head band (top 15%, deterministic skin tone) of that box is
// red-dominant. A blue patch pasted at the attack position covers most of the
// band and kills the signal; a skin-colored patch leaves it intact.
class ProbeDetector : public Detector {
 public:
  ProbeDetector(DetectorContract c, std::vector<Box> probes)
      : Detector(std::move(c)), probes_(std::move(probes)) {}

  std::vector<RawBox> raw_boxes(const Image& image) const override {
    check_image(image);
    std::vector<RawBox> out;
    for (const Box& p : probes_) {
      double r = 0, b = 0;
      int n = 0;
      int rows = std::max(3, int(p.h * 0.15));
      for (int y = int(p.y); y < int(p.y) + rows; ++y)
        for (int x = int(p.x); x < int(p.x2()); ++x) {
          r += image.at(y, x, 0);
          b += image.at(y, x, 2);
          ++n;
        }
      double obj = std::clamp(0.3 + 2.5 * (r - b) / n, 0.0, 1.0);
      RawBox rb;
      rb.box = p;
      rb.objectness = obj;
      rb.class_scores.assign(contract_.class_count, 0.05);
      rb.class_scores[contract_.person_class] = 0.9;
      out.push_back(std::move(rb));
    }
    return out;
  }

 private:
  std::vector<Box> probes_;
};

PatchBundle solid_patch(int size, double r, double g, double b, const std::string& id) {
  PatchBundle p;
  p.pixels = Image(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      p.pixels.at(y, x, 0) = r;
      p.pixels.at(y, x, 1) = g;
      p.pixels.at(y, x, 2) = b;
    }
  p.kind = PatchKind::attack;
  p.id = id;
  return p;
}

}  // namespace

TEST_CASE("synth_scene is deterministic and respects bounds") {
  SceneConfig cfg = small_scene_config();
  Scene a = synth_scene(99, cfg);
  Scene b = synth_scene(99, cfg);
  CHECK(scene_fingerprint(a) == scene_fingerprint(b));
  CHECK(a.image.v == b.image.v);
  REQUIRE(!a.ground_truth.empty());
  CHECK(a.ground_truth[0].class_id == 0);

  // 500-scene bulk run: boxes inside bounds, distinct seeds give distinct images.
  std::set<uint64_t> hashes;
  Prng seeds(5);
  for (int i = 0; i < 500; ++i) {
    Scene s = synth_scene(seeds.next_u64(), cfg);
    for (const auto& gt : s.ground_truth) {
      CHECK(gt.box.x >= 0);
      CHECK(gt.box.y >= 0);
      CHECK(gt.box.x2() <= cfg.image_size);
      CHECK(gt.box.y2() <= cfg.image_size);
    }
    hashes.insert(scene_fingerprint(s));
  }
  CHECK(hashes.size() == 500);
}

TEST_CASE("synth_scene with zero objects and infeasible configs") {
  SceneConfig cfg = small_scene_config();
  cfg.min_objects = 0;
  cfg.max_objects = 0;
  cfg.min_persons = 0;
  Scene s = synth_scene(1, cfg);
  CHECK(s.ground_truth.empty());

  SceneConfig bad = small_scene_config();
  bad.person_h_max = 500;
  CHECK_THROWS_AS(synth_scene(1, bad), UserError);

  SceneConfig crowded = small_scene_config();
  crowded.min_objects = crowded.max_objects = 40;
  crowded.min_persons = 0;
  CHECK_THROWS_AS(synth_scene(1, crowded), UserError);
}

TEST_CASE("apply_patch overwrites exactly the patch rectangle") {
  Image img(96, 96, 3, 0.0);
  Image patch(24, 24, 3, 0.5);
  Image out = apply_patch(img, patch, {0, 0});
  CHECK(out.at(0, 0, 0) == 0.5);
  CHECK(out.at(23, 23, 2) == 0.5);
  CHECK(out.at(24, 24, 0) == 0.0);
  CHECK(l0_pixel_diff(img, out) == 24 * 24);

  // Read-back round trip.
  Image out2 = apply_patch(img, patch, {30.3, 40.7});
  PixelRect r = raster_rect({30.3, 40.7}, 24, 96);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x)
      for (int ch = 0; ch < 3; ++ch)
        CHECK(out2.at(r.y + y, r.x + x, ch) == patch.at(y, x, ch));

  CHECK_THROWS_AS(apply_patch(img, Image(100, 100, 3), {0, 0}), UserError);
}

TEST_CASE("patch pixel gradient equals image gradient on the rectangle") {
  Prng rng(321);
  auto det = ToyDetector(small_contract(), small_net_config(), rng.next_u64());
  Image img = random_image(48, rng);
  Image patch(12, 12, 3);
  for (double& v : patch.v) v = rng.uniform();

  Point origin{17.6, 9.2};
  PixelRect rect = raster_rect(origin, 12, 48);
  Image composite = apply_patch(img, patch, origin);

  std::vector<LossTarget> targets = {LossTarget{Box{10, 6, 20, 24}, 0, true}};
  TermSet terms;
  auto res = det.loss_and_gradient(composite, targets, terms, rect);

  // Central differences directly on patch pixels, recompositing each time.
  Prng pick(55);
  const double h = 1e-5;
  int checked = 0;
  for (int attempt = 0; attempt < 60 && checked < 5; ++attempt) {
    int y = pick.uniform_int(12), x = pick.uniform_int(12), ch = pick.uniform_int(3);
    Image pp = patch, pm = patch;
    pp.at(y, x, ch) += h;
    pm.at(y, x, ch) -= h;
    auto lv = [&](const Image& p) {
      auto c = apply_patch(img, p, origin);
      return terms.total(det.loss_and_gradient(c, targets, terms, rect).terms);
    };
    double fp = lv(pp), fm = lv(pm), f0 = lv(patch);
    if (std::abs(fp + fm - 2 * f0) > 0.01 * (std::abs(fp - fm) + 1e-12)) continue;
    double fd = (fp - fm) / (2 * h);
    double an = res.grad.at(y, x, ch);
    double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    CHECK(std::abs(fd - an) / denom <= 1e-3);
    ++checked;
  }
  CHECK(checked == 5);
}

TEST_CASE("build_pairs keeps only successful attacks and records victims") {
  SceneConfig cfg = small_scene_config();
  cfg.min_objects = 1;
  cfg.max_objects = 1;  // exactly one person per scene
  cfg.person_h_min = 40;
  cfg.person_h_max = 48;  // keeps the head band within reach of the patch
  std::vector<Scene> scenes = synth_scenes(17, cfg, 8);

  DetectorContract c = small_contract(96, 2);
  std::vector<Box> probes;
  for (const Scene& s : scenes) probes.push_back(s.ground_truth[0].box);
  ProbeDetector det(c, probes);

  PatchBundle blue = solid_patch(24, 0.0, 0.0, 1.0, "attack/blue");
  auto pairs = build_pairs(scenes, blue, det);
  CHECK(pairs.size() >= 6);  // blue kills the head-band rule wherever it lands
  for (const auto& p : pairs) {
    CHECK(!p.victim_boxes.empty());
    CHECK(!p.attack_rects.empty());
    CHECK(p.attack_patch_id == "attack/blue");
    CHECK(l0_pixel_diff(p.benign.image, p.adversarial.image) > 0);
  }

  // A head-band-colored patch leaves the rule satisfied: attack ineffective.
  PatchBundle skin = solid_patch(24, 0.85, 0.72, 0.58, "attack/skin");
  CHECK_THROWS_AS(build_pairs(scenes, skin, det), UserError);

  CHECK_THROWS_AS(build_pairs({}, blue, det), UserError);

  // Detector-side pair verification accepts what build_pairs produced.
  CHECK_NOTHROW(verify_pairs_with_detector(pairs, det));
}

TEST_CASE("scene and pair persistence round trips") {
  auto dir = tmp_dir("patchprobe_corpus_rt");
  SceneConfig cfg = small_scene_config();
  auto scenes = synth_scenes(3, cfg, 4);
  save_scenes(dir / "scenes", scenes, "cfghash");
  auto back = load_scenes(dir / "scenes");
  REQUIRE(back.size() == scenes.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].image.v == scenes[i].image.v);
    REQUIRE(back[i].ground_truth.size() == scenes[i].ground_truth.size());
    for (size_t j = 0; j < back[i].ground_truth.size(); ++j)
      CHECK(back[i].ground_truth[j].box == scenes[i].ground_truth[j].box);
  }

  cfg.min_objects = cfg.max_objects = 1;
  cfg.person_h_min = 40;
  cfg.person_h_max = 48;
  auto pscenes = synth_scenes(29, cfg, 6);
  std::vector<Box> probes;
  for (const Scene& s : pscenes) probes.push_back(s.ground_truth[0].box);
  ProbeDetector det(small_contract(96, 2), probes);
  auto pairs = build_pairs(pscenes, solid_patch(24, 0, 0, 1, "attack/blue"), det);
  save_pairs(dir / "pairs", pairs, "cfghash", 24);
  auto pback = load_pairs(dir / "pairs");
  REQUIRE(pback.size() == pairs.size());
  CHECK(pback[0].benign.image.v == pairs[0].benign.image.v);
  CHECK(pback[0].adversarial.image.v == pairs[0].adversarial.image.v);
  CHECK(pback[0].victim_boxes.size() == pairs[0].victim_boxes.size());

  // Tampering outside the attack rects must be caught on load.
  Image tampered = pairs[0].adversarial.image;
  tampered.at(0, 0, 0) = tampered.at(0, 0, 0) > 0.5 ? 0.0 : 1.0;
  bool inside_rect = false;
  for (const auto& r : pairs[0].attack_rects)
    if (r.x == 0 && r.y == 0) inside_rect = true;
  if (!inside_rect) {
    write_png((dir / "pairs" / "adv_0000.png").string(), tampered, 8);
    CHECK_THROWS_AS(load_pairs(dir / "pairs"), UserError);
  }
}

TEST_CASE("patch bundle persistence is lossless at 16-bit") {
  auto dir = tmp_dir("patchprobe_bundle_rt");
  Prng rng(4);
  PatchBundle b;
  b.pixels = Image(16, 16, 3);
  for (double& v : b.pixels.v) v = rng.uniform();
  quantize(b.pixels, 16);
  b.kind = PatchKind::canary;
  b.target_class = 4;
  b.slot_id = "center";
  b.seed = 77;
  b.config_hash = "abc";
  b.id = "canary/boat/center";
  save_patch_bundle(dir / "b", b);
  PatchBundle back = load_patch_bundle(dir / "b");
  CHECK(back.pixels.v == b.pixels.v);
  CHECK(back.kind == PatchKind::canary);
  CHECK(back.target_class == 4);
  CHECK(back.slot_id == "center");
  CHECK(back.seed == 77);
  CHECK(back.id == b.id);
}

TEST_CASE("stock class images are deterministic and distinct") {
  Image z1 = stock_class_image(2, 24);
  Image z2 = stock_class_image(2, 24);
  CHECK(z1.v == z2.v);
  Image e = stock_class_image(3, 24);
  CHECK(l0_pixel_diff(z1, e) > 100);
}
