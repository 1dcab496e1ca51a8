#include "patchprobe/sentinel.hpp"

#include <algorithm>
#include <cmath>

#include "patchprobe/errors.hpp"

namespace patchprobe {

namespace {

std::string box_str(const Box& b) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "[%.1f,%.1f,%.1f,%.1f]", b.x, b.y, b.w, b.h);
  return buf;
}

std::string slot_parent(const PlacementSlot& s) {
  if (s.parent_kind == "candidate" && s.parent_candidate)
    return "candidate" + box_str(*s.parent_candidate);
  return s.parent_kind;
}

// All candidate-derived slots of the image, top candidate first, slot order
// within a candidate fixed; a single random fallback slot when the image has
// no candidates.
std::vector<PlacementSlot> available_slots(const std::vector<CandidateBox>& candidates,
                                           const LocalizationConfig& loc, int image_size,
                                           Prng& rng) {
  std::vector<PlacementSlot> slots;
  for (const CandidateBox& c : candidates) {
    auto s = derive_slots(c, loc, image_size);
    slots.insert(slots.end(), s.begin(), s.end());
  }
  if (slots.empty()) slots.push_back(fallback_slot(rng, loc, image_size));
  return slots;
}

double covered_fraction(const Box& det, const PixelRect& rect) {
  Box r = rect.to_box();
  double ix = std::min(det.x2(), r.x2()) - std::max(det.x, r.x);
  double iy = std::min(det.y2(), r.y2()) - std::max(det.y, r.y);
  if (ix <= 0 || iy <= 0) return 0;
  return ix * iy / det.area();
}

Verdict canary_core(const Image& image,
                    const std::vector<std::pair<PatchBundle, PlacementSlot>>& placements,
                    const Detector& detector) {
  Verdict v;
  Image injected = image;
  std::vector<PixelRect> rects;
  for (const auto& [bundle, slot] : placements) {
    injected = apply_patch(injected, bundle.pixels, slot.origin);
    rects.push_back(raster_rect(slot.origin, bundle.size(), image.w));
    v.placements_used.push_back(
        PlacementRecord{bundle.id, slot.slot_id, slot.origin, slot_parent(slot)});
  }
  auto dets = detector.detect(injected);
  for (size_t i = 0; i < placements.size(); ++i) {
    const PatchBundle& bundle = placements[i].first;
    Box placed = rects[i].to_box();
    double best = 0;
    bool ok = false;
    for (const Detection& d : dets) {
      if (d.label != bundle.target_class) continue;
      double o = iou(d.box, placed);
      best = std::max(best, o);
      if (o >= 0.5) ok = true;
    }
    if (!ok) {
      EvidenceItem e;
      e.kind = "canary-missing";
      e.expectation = "canary " + detector.contract().class_name(bundle.target_class) +
                      " detected at " + box_str(placed);
      char obs[64];
      std::snprintf(obs, sizeof obs, "best same-class IoU %.3f", best);
      e.observation = obs;
      v.evidence.push_back(std::move(e));
    }
  }
  v.attacked = !v.evidence.empty();
  v.mode_fired = v.attacked ? "canary" : "none";
  return v;
}

Verdict woodpecker_core(const Image& image,
                        const std::vector<std::pair<PatchBundle, PlacementSlot>>& placements,
                        const std::vector<Detection>& before, const Detector& detector) {
  Verdict v;
  Image injected = image;
  std::vector<PixelRect> rects;
  for (const auto& [bundle, slot] : placements) {
    injected = apply_patch(injected, bundle.pixels, slot.origin);
    rects.push_back(raster_rect(slot.origin, bundle.size(), image.w));
    v.placements_used.push_back(
        PlacementRecord{bundle.id, slot.slot_id, slot.origin, slot_parent(slot)});
  }
  auto after = detector.detect(injected);
  const int person = detector.contract().person_class;
  for (const Detection& d : after) {
    if (d.label != person) continue;
    bool pre_existing = false;
    for (const Detection& b : before)
      if (b.label == person && iou(d.box, b.box) >= 0.5) {
        pre_existing = true;
        break;
      }
    if (pre_existing) continue;
    bool on_patch = false;
    for (const PixelRect& r : rects)
      if (covered_fraction(d.box, r) > 0.5) {
        on_patch = true;
        break;
      }
    if (on_patch) continue;
    EvidenceItem e;
    e.kind = "recovered-object";
    e.expectation = "no new person-class objects after woodpecker injection";
    char obs[128];
    std::snprintf(obs, sizeof obs, "new person at %s confidence %.3f", box_str(d.box).c_str(),
                  d.confidence);
    e.observation = obs;
    v.evidence.push_back(std::move(e));
  }
  v.attacked = !v.evidence.empty();
  v.mode_fired = v.attacked ? "woodpecker" : "none";
  return v;
}

std::vector<std::pair<PatchBundle, PlacementSlot>> resolve(
    const std::map<std::string, PatchBundle>& pool,
    const std::vector<std::pair<std::string, PlacementSlot>>& keyed) {
  std::vector<std::pair<PatchBundle, PlacementSlot>> out;
  for (const auto& [key, slot] : keyed) out.emplace_back(pool.at(key), slot);
  return out;
}

}  // namespace

void DeploymentPolicy::validate() const {
  if (mode < 1 || mode > 3) throw UserError("policy: mode must be 1, 2 or 3");
  if (placements_per_image < 1) throw UserError("policy: placements_per_image must be >= 1");
  if ((mode == 1 || mode == 3) && pool.canaries.empty())
    throw UserError("policy: empty canary pool");
  if ((mode == 2 || mode == 3) && pool.woodpeckers.empty())
    throw UserError("policy: empty woodpecker pool");
  loc.validate();
}

std::vector<std::pair<std::string, PlacementSlot>> sample_placements(
    const DeploymentPolicy& policy, const std::map<std::string, PatchBundle>& pool,
    const std::vector<PlacementSlot>& slots, Prng& rng) {
  if (pool.empty()) throw UserError("sample_placements: empty pool");
  if (slots.empty()) throw UserError("sample_placements: no slots");
  const long total = long(pool.size()) * long(slots.size());
  if (policy.placements_per_image > total)
    throw UserError("sample_placements: draw count exceeds pool x slot cardinality");

  std::vector<const std::string*> keys;  // map order == lexicographic
  keys.reserve(pool.size());
  for (const auto& [k, b] : pool) keys.push_back(&k);

  std::vector<int> picks;
  if (policy.randomize) {
    picks = rng.sample_without_replacement(int(total), policy.placements_per_image);
  } else {
    for (int i = 0; i < policy.placements_per_image; ++i) picks.push_back(i);
  }
  std::vector<std::pair<std::string, PlacementSlot>> out;
  for (int p : picks)
    out.emplace_back(*keys[size_t(p) / slots.size()], slots[size_t(p) % slots.size()]);
  return out;
}

namespace {

std::vector<std::pair<PatchBundle, PlacementSlot>> placements_for(
    const DeploymentPolicy& policy, const std::map<std::string, PatchBundle>& pool,
    const std::vector<CandidateBox>& candidates, int image_size, const char* stream) {
  Prng rng = Prng(policy.seed).split(stream);
  auto slots = available_slots(candidates, policy.loc, image_size, rng);
  // An image can expose fewer placement options than the policy asks for
  // (e.g. one fallback slot); the check deploys what the image admits.
  DeploymentPolicy capped = policy;
  capped.placements_per_image =
      std::min<long>(policy.placements_per_image, long(pool.size()) * long(slots.size()));
  return resolve(pool, sample_placements(capped, pool, slots, rng));
}

}  // namespace

Verdict canary_check(const Image& image, const DeploymentPolicy& policy,
                     const Detector& detector) {
  policy.validate();
  if (policy.mode != 1 && policy.mode != 3)
    throw UserError("canary_check: policy mode must be 1 or 3");
  auto candidates = find_candidates(detector.raw_boxes(image), policy.loc);
  return canary_core(image,
                     placements_for(policy, policy.pool.canaries, candidates, image.w, "canary"),
                     detector);
}

Verdict woodpecker_check(const Image& image, const DeploymentPolicy& policy,
                         const Detector& detector) {
  policy.validate();
  if (policy.mode != 2 && policy.mode != 3)
    throw UserError("woodpecker_check: policy mode must be 2 or 3");
  auto raw = detector.raw_boxes(image);
  auto candidates = find_candidates(raw, policy.loc);
  auto before = detections_from_raw(raw, detector.contract());
  return woodpecker_core(
      image, placements_for(policy, policy.pool.woodpeckers, candidates, image.w, "woodpecker"),
      before, detector);
}

Verdict combined_check(const Image& image, const DeploymentPolicy& policy,
                       const Detector& detector) {
  policy.validate();
  if (policy.mode != 3) throw UserError("combined_check: policy mode must be 3");
  // One shared candidate computation; the per-check placement streams are the
  // same ones the standalone checks derive, so Mode #3 is the exact union of
  // Mode #1 and Mode #2 under a shared seed.
  auto raw = detector.raw_boxes(image);
  auto candidates = find_candidates(raw, policy.loc);
  auto before = detections_from_raw(raw, detector.contract());

  Verdict c = canary_core(
      image, placements_for(policy, policy.pool.canaries, candidates, image.w, "canary"),
      detector);
  Verdict w = woodpecker_core(
      image, placements_for(policy, policy.pool.woodpeckers, candidates, image.w, "woodpecker"),
      before, detector);

  Verdict v;
  v.attacked = c.attacked || w.attacked;
  v.mode_fired = c.attacked ? "canary" : (w.attacked ? "woodpecker" : "none");
  v.evidence = std::move(c.evidence);
  v.evidence.insert(v.evidence.end(), w.evidence.begin(), w.evidence.end());
  v.placements_used = std::move(c.placements_used);
  v.placements_used.insert(v.placements_used.end(), w.placements_used.begin(),
                           w.placements_used.end());
  return v;
}

Verdict run_check(const Image& image, const DeploymentPolicy& policy, const Detector& detector) {
  switch (policy.mode) {
    case 1: return canary_check(image, policy, detector);
    case 2: return woodpecker_check(image, policy, detector);
    case 3: return combined_check(image, policy, detector);
  }
  throw UserError("run_check: mode must be 1, 2 or 3");
}

Verdict canary_check_with_placements(
    const Image& image, const std::vector<std::pair<PatchBundle, PlacementSlot>>& placements,
    const Detector& detector) {
  if (placements.empty()) throw UserError("canary_check_with_placements: empty placements");
  return canary_core(image, placements, detector);
}

Verdict woodpecker_check_with_placements(
    const Image& image, const std::vector<std::pair<PatchBundle, PlacementSlot>>& placements,
    const Detector& detector) {
  if (placements.empty()) throw UserError("woodpecker_check_with_placements: empty placements");
  auto before = detector.detect(image);
  return woodpecker_core(image, placements, before, detector);
}

json verdict_to_json(const std::string& image_id, int mode, const Verdict& v) {
  json j;
  j["image"] = image_id;
  j["mode"] = mode;
  j["attacked"] = v.attacked;
  j["mode_fired"] = v.mode_fired;
  json pl = json::array();
  for (const auto& p : v.placements_used)
    pl.push_back({{"patch", p.patch_id},
                  {"slot", p.slot_id},
                  {"origin", {p.origin.x, p.origin.y}},
                  {"parent", p.parent}});
  j["placements"] = pl;
  json ev = json::array();
  for (const auto& e : v.evidence)
    ev.push_back({{"kind", e.kind}, {"expectation", e.expectation}, {"observation", e.observation}});
  j["evidence"] = ev;
  return j;
}

Verdict verdict_from_json(const json& j) {
  Verdict v;
  v.attacked = j.at("attacked").get<bool>();
  v.mode_fired = j.at("mode_fired").get<std::string>();
  for (const auto& e : j.at("evidence"))
    v.evidence.push_back(EvidenceItem{e.at("kind").get<std::string>(),
                                      e.at("expectation").get<std::string>(),
                                      e.at("observation").get<std::string>()});
  for (const auto& p : j.at("placements"))
    v.placements_used.push_back(
        PlacementRecord{p.at("patch").get<std::string>(), p.at("slot").get<std::string>(),
                        Point{p.at("origin")[0].get<double>(), p.at("origin")[1].get<double>()},
                        p.at("parent").get<std::string>()});
  // attacked <=> evidence nonempty, never trusted from serialized form
  if (v.attacked != !v.evidence.empty())
    throw UserError("verdict record violates attacked <=> evidence invariant");
  return v;
}

}  // namespace patchprobe
