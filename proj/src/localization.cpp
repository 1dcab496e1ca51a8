#include "patchprobe/localization.hpp"

#include <algorithm>
#include <numeric>

#include "patchprobe/errors.hpp"

namespace patchprobe {

void LocalizationConfig::validate() const {
  if (tau < 0) throw UserError("localization: tau must be >= 0");
  if (!(tau < model_threshold))
    throw UserError("localization: tau must be below the model threshold");
  if (!(model_threshold > 0 && model_threshold < 1))
    throw UserError("localization: model_threshold must lie in (0,1)");
  if (patch_size <= 0) throw UserError("localization: patch_size must be positive");
  if (slot_offset < 0) throw UserError("localization: slot_offset must be >= 0");
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

std::vector<CandidateBox> find_candidates(const std::vector<RawBox>& raw,
                                          const LocalizationConfig& cfg) {
  cfg.validate();
  std::vector<const RawBox*> selected;
  for (const RawBox& r : raw) {
    if (r.class_scores.empty()) throw UserError("find_candidates: raw box without class scores");
    if (r.argmax_class() != cfg.person_class) continue;
    if (r.objectness >= cfg.model_threshold) continue;
    if (r.objectness < cfg.tau) continue;
    selected.push_back(&r);
  }

  const int n = int(selected.size());
  UnionFind uf(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (iou(selected[i]->box, selected[j]->box) > 0) uf.unite(i, j);

  std::vector<CandidateBox> out;
  std::vector<int> root_of(n);
  for (int i = 0; i < n; ++i) root_of[i] = uf.find(i);
  std::vector<bool> done(n, false);
  for (int i = 0; i < n; ++i) {
    if (done[root_of[i]]) continue;
    done[root_of[i]] = true;
    std::vector<Box> members;
    double peak = 0;
    for (int j = 0; j < n; ++j)
      if (root_of[j] == root_of[i]) {
        members.push_back(selected[j]->box);
        peak = std::max(peak, selected[j]->objectness);
      }
    if (peak < cfg.tau) continue;  // cannot fire with max semantics; kept for clarity
    out.push_back(CandidateBox{union_box(members), peak, int(members.size())});
  }

  std::sort(out.begin(), out.end(), [](const CandidateBox& a, const CandidateBox& b) {
    if (a.peak_objectness != b.peak_objectness) return a.peak_objectness > b.peak_objectness;
    if (a.box.x != b.box.x) return a.box.x < b.box.x;
    if (a.box.y != b.box.y) return a.box.y < b.box.y;
    if (a.box.w != b.box.w) return a.box.w < b.box.w;
    return a.box.h < b.box.h;
  });
  return out;
}

std::vector<PlacementSlot> derive_slots(const CandidateBox& candidate,
                                        const LocalizationConfig& cfg, int image_size) {
  cfg.validate();
  if (cfg.patch_size > image_size) throw UserError("derive_slots: patch larger than image");
  if (!candidate.box.valid()) throw UserError("derive_slots: invalid candidate");
  const double cx = candidate.box.cx(), cy = candidate.box.cy(), off = cfg.slot_offset;
  const double half = cfg.patch_size / 2.0;
  const Point centers[5] = {
      {cx, cy}, {cx, cy - off}, {cx, cy + off}, {cx - off, cy}, {cx + off, cy}};
  std::vector<PlacementSlot> slots;
  for (int i = 0; i < 5; ++i) {
    PlacementSlot s;
    s.slot_id = kSlotOrder[i];
    s.origin = clamp_placement({centers[i].x - half, centers[i].y - half}, cfg.patch_size,
                               image_size);
    s.parent_candidate = candidate.box;
    s.parent_kind = "candidate";
    slots.push_back(std::move(s));
  }
  return slots;
}

PlacementSlot fallback_slot(Prng& rng, const LocalizationConfig& cfg, int image_size) {
  cfg.validate();
  if (cfg.patch_size > image_size) throw UserError("fallback_slot: patch larger than image");
  PlacementSlot s;
  s.slot_id = "center";
  s.origin = Point{double(rng.uniform_int(image_size - cfg.patch_size + 1)),
                   double(rng.uniform_int(image_size - cfg.patch_size + 1))};
  s.parent_kind = "random-fallback";
  return s;
}

}  // namespace patchprobe
