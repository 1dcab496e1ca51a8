#include <doctest.h>

#include "patchprobe/errors.hpp"
#include "patchprobe/mock_detector.hpp"
#include "patchprobe/sentinel.hpp"
#include "support/test_support.hpp"

using namespace patchprobe;
using namespace patchprobe::testing;

namespace {

constexpr int kImg = 64;

DetectorContract sentinel_contract() {
  DetectorContract c;
  c.class_count = 3;  // person, block, zebra
  c.person_class = 0;
  c.objectness_threshold = 0.5;
  c.input_size = kImg;
  c.class_names = {"person", "block", "zebra"};
  return c;
}

RawBox raw(Box b, double obj, int cls) {
  RawBox r;
  r.box = b;
  r.objectness = obj;
  r.class_scores = {0.05, 0.05, 0.05};
  r.class_scores[cls] = 0.9;
  return r;
}

PatchBundle canary_bundle() {
  PatchBundle b;
  b.pixels = Image(16, 16, 3, 0.9);
  quantize(b.pixels, 16);
  b.kind = PatchKind::canary;
  b.target_class = 2;
  b.slot_id = "center";
  b.id = "canary/zebra/center";
  return b;
}

PatchBundle wood_bundle() {
  PatchBundle b;
  b.pixels = Image(16, 16, 3, 0.2);
  quantize(b.pixels, 16);
  b.kind = PatchKind::woodpecker;
  b.id = "woodpecker/00";
  return b;
}

LocalizationConfig loc16() {
  LocalizationConfig loc;
  loc.patch_size = 16;
  loc.slot_offset = 8;
  return loc;
}

DeploymentPolicy policy_for(int mode, uint64_t seed, bool randomize = false) {
  DeploymentPolicy p;
  p.mode = mode;
  p.pool.canaries.emplace("canary/zebra/center", canary_bundle());
  p.pool.woodpeckers.emplace("woodpecker/00", wood_bundle());
  p.randomize = randomize;
  p.seed = seed;
  p.loc = loc16();
  return p;
}

}  // namespace

TEST_CASE("sample_placements determinism, bounds and non-random order") {
  DeploymentPolicy p = policy_for(1, 5, true);
  std::map<std::string, PatchBundle> pool;
  pool.emplace("a", canary_bundle());
  pool.emplace("b", canary_bundle());
  pool.emplace("c", canary_bundle());
  std::vector<PlacementSlot> slots(2);
  slots[0].slot_id = "center";
  slots[1].slot_id = "up";

  Prng r1(9), r2(9);
  auto s1 = sample_placements(p, pool, slots, r1);
  auto s2 = sample_placements(p, pool, slots, r2);
  REQUIRE(s1.size() == 1);
  CHECK(s1[0].first == s2[0].first);
  CHECK(s1[0].second.slot_id == s2[0].second.slot_id);

  p.placements_per_image = 7;
  Prng r3(9);
  CHECK_THROWS_AS(sample_placements(p, pool, slots, r3), UserError);

  p.placements_per_image = 2;
  p.randomize = false;
  Prng r4(1);
  auto fixed = sample_placements(p, pool, slots, r4);
  CHECK(fixed[0].first == "a");
  CHECK(fixed[0].second.slot_id == "center");
  CHECK(fixed[1].first == "a");
  CHECK(fixed[1].second.slot_id == "up");

  // Rough uniformity over the 6 cross-product cells.
  p.randomize = true;
  p.placements_per_image = 1;
  Prng r5(33);
  std::map<std::string, int> counts;
  for (int i = 0; i < 6000; ++i) {
    auto s = sample_placements(p, pool, slots, r5);
    counts[s[0].first + "/" + s[0].second.slot_id]++;
  }
  REQUIRE(counts.size() == 6);
  for (const auto& [k, c] : counts) {
    CHECK(c > 800);
    CHECK(c < 1200);
  }
}

TEST_CASE("canary check: candidate slot placement, hit and miss") {
  auto contract = sentinel_contract();
  Image base(kImg, kImg, 3, 0.35);
  quantize(base, 8);

  // One suspect box so the canary lands at its center slot deterministically.
  Box suspect{20, 20, 16, 24};
  MockDetector det(contract, {raw(suspect, 0.2, 0)});

  DeploymentPolicy policy = policy_for(1, 42);
  CandidateBox cand{suspect, 0.2, 1};
  auto slots = derive_slots(cand, policy.loc, kImg);
  PixelRect rect = raster_rect(slots[0].origin, 16, kImg);
  Image with_canary = apply_patch(base, canary_bundle().pixels, slots[0].origin);

  SUBCASE("canary detected: clean verdict") {
    det.script(with_canary, {raw(suspect, 0.2, 0), raw(rect.to_box(), 0.9, 2)});
    Verdict v = canary_check(base, policy, det);
    CHECK_FALSE(v.attacked);
    CHECK(v.mode_fired == "none");
    CHECK(v.evidence.empty());
    REQUIRE(v.placements_used.size() == 1);
    CHECK(v.placements_used[0].patch_id == "canary/zebra/center");
    CHECK(v.placements_used[0].slot_id == "center");
  }

  SUBCASE("canary missing: attack verdict with evidence") {
    det.script(with_canary, {raw(suspect, 0.2, 0)});
    Verdict v = canary_check(base, policy, det);
    CHECK(v.attacked);
    CHECK(v.mode_fired == "canary");
    REQUIRE(v.evidence.size() == 1);
    CHECK(v.evidence[0].kind == "canary-missing");
  }

  SUBCASE("wrong-class detection at the canary rect still alerts") {
    det.script(with_canary, {raw(suspect, 0.2, 0), raw(rect.to_box(), 0.9, 1)});
    Verdict v = canary_check(base, policy, det);
    CHECK(v.attacked);
  }

  SUBCASE("input image is not mutated") {
    Image before = base;
    det.script(with_canary, {raw(suspect, 0.2, 0)});
    canary_check(base, policy, det);
    CHECK(base.v == before.v);
  }
}

TEST_CASE("woodpecker check: new person alerts, patch-covered boxes do not") {
  auto contract = sentinel_contract();
  Image base(kImg, kImg, 3, 0.4);
  quantize(base, 8);
  Box suspect{24, 20, 16, 24};
  MockDetector det(contract, {raw(suspect, 0.2, 0)});

  DeploymentPolicy policy = policy_for(2, 43);
  CandidateBox cand{suspect, 0.2, 1};
  auto slots = derive_slots(cand, policy.loc, kImg);
  PixelRect rect = raster_rect(slots[0].origin, 16, kImg);
  Image with_wood = apply_patch(base, wood_bundle().pixels, slots[0].origin);

  SUBCASE("no change: clean") {
    det.script(with_wood, {raw(suspect, 0.2, 0)});
    Verdict v = woodpecker_check(base, policy, det);
    CHECK_FALSE(v.attacked);
  }

  SUBCASE("recovered person: attack") {
    det.script(with_wood, {raw(suspect, 0.2, 0), raw(Box{4, 4, 12, 20}, 0.9, 0)});
    Verdict v = woodpecker_check(base, policy, det);
    CHECK(v.attacked);
    CHECK(v.mode_fired == "woodpecker");
    REQUIRE(v.evidence.size() == 1);
    CHECK(v.evidence[0].kind == "recovered-object");
  }

  SUBCASE("new box mostly on the injected patch is ignored") {
    Box on_patch{double(rect.x) + 1, double(rect.y) + 1, double(rect.w) - 2, double(rect.h) - 2};
    det.script(with_wood, {raw(suspect, 0.2, 0), raw(on_patch, 0.9, 0)});
    Verdict v = woodpecker_check(base, policy, det);
    CHECK_FALSE(v.attacked);
  }

  SUBCASE("new non-person object does not alert") {
    det.script(with_wood, {raw(suspect, 0.2, 0), raw(Box{4, 4, 12, 20}, 0.9, 1)});
    Verdict v = woodpecker_check(base, policy, det);
    CHECK_FALSE(v.attacked);
  }

  SUBCASE("pre-existing person is not new") {
    MockDetector det2(contract, {raw(suspect, 0.2, 0), raw(Box{4, 4, 12, 20}, 0.9, 0)});
    det2.script(with_wood, {raw(suspect, 0.2, 0), raw(Box{4, 4, 12, 20}, 0.9, 0)});
    // Candidates identical; before includes the person, after too: no alert.
    Verdict v = woodpecker_check(base, policy, det2);
    CHECK_FALSE(v.attacked);
  }
}

TEST_CASE("combined check is the exact union under a shared seed") {
  auto contract = sentinel_contract();
  // Default script: a weak suspect plus a strong person anywhere; composites
  // fall back to the default, so woodpecker sees a "new" person and canary
  // sees itself missing.
  MockDetector det(contract, {raw(Box{30, 20, 14, 22}, 0.2, 0), raw(Box{4, 4, 10, 16}, 0.9, 0)});

  for (uint64_t seed : {1ull, 2ull, 3ull, 17ull, 99ull}) {
    Image base(kImg, kImg, 3, 0.3 + 0.01 * double(seed));
    quantize(base, 8);
    DeploymentPolicy p1 = policy_for(1, seed, true);
    DeploymentPolicy p2 = policy_for(2, seed, true);
    DeploymentPolicy p3 = policy_for(3, seed, true);
    Verdict c = canary_check(base, p1, det);
    Verdict w = woodpecker_check(base, p2, det);
    Verdict both = combined_check(base, p3, det);
    CHECK(both.attacked == (c.attacked || w.attacked));
    CHECK(both.evidence.size() == c.evidence.size() + w.evidence.size());
    CHECK(both.placements_used.size() == c.placements_used.size() + w.placements_used.size());
    CHECK((both.attacked == !both.evidence.empty()));
  }
}

TEST_CASE("policy validation") {
  DeploymentPolicy p = policy_for(1, 1);
  p.pool.canaries.clear();
  Image img(kImg, kImg, 3, 0.2);
  MockDetector det(sentinel_contract());
  CHECK_THROWS_AS(canary_check(img, p, det), UserError);

  DeploymentPolicy w = policy_for(2, 1);
  w.pool.woodpeckers.clear();
  CHECK_THROWS_AS(woodpecker_check(img, w, det), UserError);

  DeploymentPolicy bad = policy_for(2, 1);
  CHECK_THROWS_AS(canary_check(img, bad, det), UserError);
  DeploymentPolicy bad3 = policy_for(1, 1);
  CHECK_THROWS_AS(combined_check(img, bad3, det), UserError);
}

TEST_CASE("verdict json round trip and invariant") {
  Verdict v;
  v.attacked = true;
  v.mode_fired = "canary";
  v.evidence.push_back({"canary-missing", "canary zebra detected", "best IoU 0.1"});
  v.placements_used.push_back({"canary/zebra/center", "center", {3.5, 7.0}, "candidate[1,2,3,4]"});
  json j = verdict_to_json("img_7", 3, v);
  CHECK(j["image"] == "img_7");
  Verdict back = verdict_from_json(j);
  CHECK(back.attacked);
  CHECK(back.mode_fired == "canary");
  REQUIRE(back.evidence.size() == 1);
  CHECK(back.placements_used[0].patch_id == "canary/zebra/center");

  json broken = j;
  broken["evidence"] = json::array();
  CHECK_THROWS_AS(verdict_from_json(broken), UserError);
}

TEST_CASE("fallback placement when no candidates exist is seed-deterministic") {
  auto contract = sentinel_contract();
  MockDetector det(contract, {});  // no raw boxes at all
  Image base(kImg, kImg, 3, 0.25);
  quantize(base, 8);
  DeploymentPolicy p = policy_for(1, 77);
  Verdict a = canary_check(base, p, det);
  Verdict b = canary_check(base, p, det);
  REQUIRE(a.placements_used.size() == 1);
  CHECK(a.placements_used[0].parent == "random-fallback");
  CHECK(a.placements_used[0].origin.x == b.placements_used[0].origin.x);
  CHECK(a.placements_used[0].origin.y == b.placements_used[0].origin.y);
}
