#include "patchprobe/attack.hpp"

#include <algorithm>
#include <cmath>

#include "patchprobe/errors.hpp"
#include "patchprobe/optim.hpp"

namespace patchprobe {

namespace {

void clamp01(std::vector<double>& v) {
  for (double& x : v) x = std::clamp(x, 0.0, 1.0);
}

std::vector<Box> person_boxes(const Scene& scene, int person_class) {
  std::vector<Box> out;
  for (const auto& gt : scene.ground_truth)
    if (gt.class_id == person_class) out.push_back(gt.box);
  return out;
}

// Composite the attack patch onto every person; returns the pasted rects.
Image composite_on_persons(const Scene& scene, const Image& patch, int person_class,
                           std::vector<PixelRect>* rects) {
  Image out = scene.image;
  for (const auto& gt : scene.ground_truth) {
    if (gt.class_id != person_class) continue;
    Point origin = attack_origin_for(gt.box, patch.w);
    out = apply_patch(out, patch, origin);
    if (rects) rects->push_back(raster_rect(origin, patch.w, out.w));
  }
  return out;
}

// Adds the full-image gradient restricted to `rect` into the patch gradient,
// skipping pixels that a later overlay owns (later pastes overwrite earlier
// ones, so those pixels carry no dependence on this instance).
void accumulate_patch_grad(std::vector<double>& patch_grad, const Image& full_grad,
                           const PixelRect& rect, const std::vector<PixelRect>& exclusions,
                           int patch_size) {
  for (int y = 0; y < rect.h; ++y)
    for (int x = 0; x < rect.w; ++x) {
      const int iy = rect.y + y, ix = rect.x + x;
      bool covered = false;
      for (const PixelRect& e : exclusions)
        if (ix >= e.x && ix < e.x + e.w && iy >= e.y && iy < e.y + e.h) {
          covered = true;
          break;
        }
      if (covered) continue;
      for (int ch = 0; ch < 3; ++ch)
        patch_grad[(size_t(y) * patch_size + x) * 3 + ch] += full_grad.at(iy, ix, ch);
    }
}

struct SceneEval {
  double detect = 0;
  double deploy = 0;
  std::vector<double> grad;
};

enum class ForgeMode { plain, vs_canary, vs_woodpecker };

SceneEval eval_scene(const Scene& scene, const Image& patch, const Detector& detector,
                     const AttackConfig& cfg, const DeploymentKnowledge* knowledge,
                     ForgeMode mode) {
  const int S = patch.w;
  const int img = scene.image.w;
  const PixelRect full{0, 0, img, img};
  const int person = detector.contract().person_class;

  SceneEval ev;
  ev.grad.assign(size_t(S) * S * 3, 0.0);

  std::vector<PixelRect> rects;
  Image composite = composite_on_persons(scene, patch, person, &rects);
  std::vector<Box> persons = person_boxes(scene, person);

  auto rect_exclusions = [&rects](size_t i, const PixelRect* extra) {
    std::vector<PixelRect> ex(rects.begin() + i + 1, rects.end());
    if (extra) ex.push_back(*extra);
    return ex;
  };

  if (mode != ForgeMode::vs_woodpecker) {
    // Bare hiding term: max person-overlapping objectness of x + p.
    auto probe = detector.max_objectness(composite, persons, cfg.person_iou_floor, full);
    ev.detect = probe.value;
    if (probe.found)
      for (size_t i = 0; i < rects.size(); ++i)
        accumulate_patch_grad(ev.grad, probe.grad, rects[i], rect_exclusions(i, nullptr), S);
  }

  if (mode == ForgeMode::vs_canary) {
    for (const auto& [bundle, slot] : knowledge->canary_set) {
      PixelRect crect = raster_rect(slot.origin, bundle.size(), img);
      Image deployed = apply_patch(composite, bundle.pixels, slot.origin);
      LossTarget target{crect.to_box(), bundle.target_class, true};
      auto res = detector.loss_and_gradient(deployed, {target}, TermSet{true, true, true}, full);
      ev.deploy += res.terms.obj + res.terms.cls + res.terms.box;
      for (size_t i = 0; i < rects.size(); ++i)
        accumulate_patch_grad(ev.grad, res.grad, rects[i], rect_exclusions(i, &crect), S);
    }
  } else if (mode == ForgeMode::vs_woodpecker) {
    for (const auto& [bundle, slot] : knowledge->woodpecker_set) {
      PixelRect wrect = raster_rect(slot.origin, bundle.size(), img);
      Image deployed = apply_patch(composite, bundle.pixels, slot.origin);
      auto probe = detector.max_objectness(deployed, persons, cfg.person_iou_floor, full);
      ev.deploy += probe.value;
      if (probe.found)
        for (size_t i = 0; i < rects.size(); ++i)
          accumulate_patch_grad(ev.grad, probe.grad, rects[i], rect_exclusions(i, &wrect), S);
    }
  }
  return ev;
}

AttackForgeResult forge_common(const std::vector<Scene>& scenes, const Detector& detector,
                               const DeploymentKnowledge* knowledge, const AttackConfig& cfg,
                               ForgeMode mode, PatchKind kind) {
  cfg.validate();
  if (!detector.differentiable()) throw UserError("attack forge: non-differentiable detector");
  if (scenes.empty()) throw UserError("attack forge: no scenes");
  const int person = detector.contract().person_class;
  for (const Scene& s : scenes)
    if (person_boxes(s, person).empty())
      throw UserError("attack forge: every training scene needs a person proxy");
  if (knowledge) knowledge->validate();

  const int S = cfg.patch_size;
  Prng rng(cfg.seed);
  Image patch(S, S, 3);
  Prng init_rng = rng.split("init");
  for (double& v : patch.v) v = init_rng.uniform();
  quantize(patch, 16);  // start on the persistable grid so 0 iterations == bundle verbatim

  Adam adam;
  adam.lr = cfg.learning_rate;
  adam.reset(patch.v.size());
  ConvergenceMonitor monitor(cfg.convergence_window, cfg.convergence_rel_tol);
  Prng batch_rng = rng.split("batch");

  AttackForgeResult out;
  const double regu_w = cfg.mu * cfg.tv_weight;

  for (long step = 0; step < cfg.max_iters; ++step) {
    std::vector<int> idx;
    if (cfg.batch <= 0 || cfg.batch >= int(scenes.size())) {
      idx.resize(scenes.size());
      for (size_t i = 0; i < scenes.size(); ++i) idx[i] = int(i);
    } else {
      idx = batch_rng.sample_without_replacement(int(scenes.size()), cfg.batch);
    }

    std::vector<SceneEval> evals(idx.size());
    parallel_for(int(idx.size()), cfg.jobs, [&](int k) {
      evals[k] = eval_scene(scenes[idx[k]], patch, detector, cfg, knowledge, mode);
    });

    double detect = 0, deploy = 0;
    std::vector<double> grad(patch.v.size(), 0.0);
    for (const SceneEval& e : evals) {
      detect += e.detect;
      deploy += e.deploy;
      for (size_t j = 0; j < grad.size(); ++j) grad[j] += e.grad[j];
    }
    const double inv = 1.0 / double(evals.size());
    detect *= inv;
    deploy *= inv;
    for (double& g : grad) g *= inv;

    double regu = 0;
    if (regu_w != 0) {
      regu = regu_w * total_variation(patch);
      Image tvg = total_variation_gradient(patch);
      for (size_t j = 0; j < grad.size(); ++j) grad[j] += regu_w * tvg.v[j];
    }

    AttackTraceRow row{step, detect + deploy + regu, detect, deploy, regu};
    if (!std::isfinite(row.total))
      throw InternalError("attack forge: non-finite loss at step " + std::to_string(step));
    out.trace.push_back(row);

    adam.step(patch.v, grad);
    clamp01(patch.v);
    if (monitor.push(row.total)) break;
  }

  quantize(patch, 16);
  PatchBundle bundle;
  bundle.pixels = std::move(patch);
  bundle.kind = kind;
  bundle.seed = cfg.seed;
  out.bundle = std::move(bundle);
  return out;
}

}  // namespace

void AttackConfig::validate() const {
  if (learning_rate <= 0) throw UserError("attack config: learning_rate must be positive");
  if (mu < 0) throw UserError("attack config: mu must be >= 0");
  if (tv_weight < 0) throw UserError("attack config: tv_weight must be >= 0");
  if (max_iters < 0) throw UserError("attack config: max_iters must be >= 0");
  if (patch_size <= 0) throw UserError("attack config: patch_size must be positive");
  if (!(person_iou_floor >= 0 && person_iou_floor < 1))
    throw UserError("attack config: person_iou_floor must lie in [0,1)");
}

void DeploymentKnowledge::validate() const {
  int size = -1;
  auto check = [&size](const PatchBundle& b) {
    if (size < 0) size = b.size();
    if (b.size() != size) throw UserError("deployment knowledge: mixed patch sizes");
  };
  for (const auto& [b, s] : canary_set) check(b);
  for (const auto& [b, s] : woodpecker_set) check(b);
}

double total_variation(const Image& patch) {
  double tv = 0;
  for (int y = 0; y < patch.h; ++y)
    for (int x = 0; x < patch.w; ++x)
      for (int c = 0; c < patch.c; ++c) {
        if (x + 1 < patch.w) tv += std::abs(patch.at(y, x + 1, c) - patch.at(y, x, c));
        if (y + 1 < patch.h) tv += std::abs(patch.at(y + 1, x, c) - patch.at(y, x, c));
      }
  return tv;
}

Image total_variation_gradient(const Image& patch) {
  Image g(patch.h, patch.w, patch.c);
  auto sgn = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
  for (int y = 0; y < patch.h; ++y)
    for (int x = 0; x < patch.w; ++x)
      for (int c = 0; c < patch.c; ++c) {
        if (x + 1 < patch.w) {
          double s = sgn(patch.at(y, x + 1, c) - patch.at(y, x, c));
          g.at(y, x + 1, c) += s;
          g.at(y, x, c) -= s;
        }
        if (y + 1 < patch.h) {
          double s = sgn(patch.at(y + 1, x, c) - patch.at(y, x, c));
          g.at(y + 1, x, c) += s;
          g.at(y, x, c) -= s;
        }
      }
  return g;
}

AttackForgeResult forge_attack_patch(const std::vector<Scene>& scenes, const Detector& detector,
                                     const AttackConfig& cfg) {
  return forge_common(scenes, detector, nullptr, cfg, ForgeMode::plain, PatchKind::attack);
}

AttackForgeResult forge_adaptive_vs_canary(const std::vector<Scene>& scenes,
                                           const Detector& detector,
                                           const DeploymentKnowledge& knowledge,
                                           const AttackConfig& cfg) {
  // An empty canary set degenerates to the plain attack objective (sum over
  // the empty set contributes nothing).
  return forge_common(scenes, detector, &knowledge, cfg, ForgeMode::vs_canary,
                      PatchKind::adaptive);
}

AttackForgeResult forge_adaptive_vs_woodpecker(const std::vector<Scene>& scenes,
                                               const Detector& detector,
                                               const DeploymentKnowledge& knowledge,
                                               const AttackConfig& cfg) {
  if (knowledge.woodpecker_set.empty())
    throw UserError("forge_adaptive_vs_woodpecker: empty woodpecker set");
  return forge_common(scenes, detector, &knowledge, cfg, ForgeMode::vs_woodpecker,
                      PatchKind::adaptive);
}

PlacementSlot side_slot(const std::string& side, int patch_size, int image_size) {
  if (side != "left" && side != "right") throw UserError("side_slot: side must be left or right");
  double x = side == "left" ? image_size / 8.0 : 5.0 * image_size / 8.0;
  double y = (image_size - patch_size) / 2.0;
  PlacementSlot s;
  s.slot_id = side;
  s.origin = clamp_placement({x, y}, patch_size, image_size);
  s.parent_kind = "fixed-side";
  return s;
}

std::string dep_strategy_description(int id) {
  switch (id) {
    case 1: return "fixed boat canary, left side";
    case 2: return "random canary {boat,elephant,zebra} x {left,right}";
    case 3: return "fixed woodpecker, left side";
    case 4: return "random woodpecker x {left,right}";
  }
  throw UserError("unknown deployment strategy id " + std::to_string(id));
}

namespace {

const PatchBundle& canary_by_class(const PatchPool& pools, const DetectorContract& contract,
                                   const std::string& class_name) {
  int cls = contract.class_id(class_name);
  if (cls < 0) throw UserError("dep_strategy_pool: detector has no class " + class_name);
  std::string preferred = canary_key(contract, cls, "center");
  auto it = pools.canaries.find(preferred);
  if (it != pools.canaries.end()) return it->second;
  for (const auto& [k, b] : pools.canaries)
    if (b.target_class == cls) return b;
  throw UserError("dep_strategy_pool: missing trained canary for class " + class_name);
}

}  // namespace

DeploymentKnowledge dep_strategy_pool(int id, const PatchPool& pools,
                                      const DetectorContract& contract, int image_size) {
  DeploymentKnowledge k;
  auto side = [&](const std::string& s, int patch_size) {
    return side_slot(s, patch_size, image_size);
  };
  switch (id) {
    case 1: {
      const PatchBundle& boat = canary_by_class(pools, contract, "boat");
      k.canary_set.emplace_back(boat, side("left", boat.size()));
      break;
    }
    case 2: {
      for (const char* name : {"boat", "elephant", "zebra"}) {
        const PatchBundle& b = canary_by_class(pools, contract, name);
        k.canary_set.emplace_back(b, side("left", b.size()));
        k.canary_set.emplace_back(b, side("right", b.size()));
      }
      break;
    }
    case 3: {
      if (pools.woodpeckers.empty()) throw UserError("dep_strategy_pool: no trained woodpecker");
      const PatchBundle& w = pools.woodpeckers.begin()->second;
      k.woodpecker_set.emplace_back(w, side("left", w.size()));
      break;
    }
    case 4: {
      if (pools.woodpeckers.empty()) throw UserError("dep_strategy_pool: no trained woodpecker");
      const PatchBundle& w = pools.woodpeckers.begin()->second;
      k.woodpecker_set.emplace_back(w, side("left", w.size()));
      k.woodpecker_set.emplace_back(w, side("right", w.size()));
      break;
    }
    default:
      throw UserError("unknown deployment strategy id " + std::to_string(id));
  }
  k.validate();
  return k;
}

Image apply_attack_to_scene(const Scene& scene, const Image& patch, int person_class,
                            std::vector<PixelRect>* rects) {
  return composite_on_persons(scene, patch, person_class, rects);
}

double attack_detect_loss(const Scene& scene, const Image& patch, const Detector& detector,
                          double person_iou_floor) {
  const int person = detector.contract().person_class;
  Image composite = composite_on_persons(scene, patch, person, nullptr);
  auto persons = person_boxes(scene, person);
  if (persons.empty()) throw UserError("attack_detect_loss: scene has no person");
  const PixelRect full{0, 0, composite.w, composite.w};
  return detector.max_objectness(composite, persons, person_iou_floor, full).value;
}

double canary_deploy_loss(const Scene& scene, const Image& patch, const Detector& detector,
                          const DeploymentKnowledge& knowledge) {
  const int person = detector.contract().person_class;
  Image composite = composite_on_persons(scene, patch, person, nullptr);
  const PixelRect full{0, 0, composite.w, composite.w};
  double sum = 0;
  for (const auto& [bundle, slot] : knowledge.canary_set) {
    PixelRect crect = raster_rect(slot.origin, bundle.size(), composite.w);
    Image deployed = apply_patch(composite, bundle.pixels, slot.origin);
    LossTarget target{crect.to_box(), bundle.target_class, true};
    auto res = detector.loss_and_gradient(deployed, {target}, TermSet{true, true, true}, full);
    sum += res.terms.obj + res.terms.cls + res.terms.box;
  }
  return sum;
}

double woodpecker_deploy_loss(const Scene& scene, const Image& patch, const Detector& detector,
                              const DeploymentKnowledge& knowledge, double person_iou_floor) {
  const int person = detector.contract().person_class;
  Image composite = composite_on_persons(scene, patch, person, nullptr);
  auto persons = person_boxes(scene, person);
  if (persons.empty()) throw UserError("woodpecker_deploy_loss: scene has no person");
  const PixelRect full{0, 0, composite.w, composite.w};
  double sum = 0;
  for (const auto& [bundle, slot] : knowledge.woodpecker_set) {
    Image deployed = apply_patch(composite, bundle.pixels, slot.origin);
    sum += detector.max_objectness(deployed, persons, person_iou_floor, full).value;
  }
  return sum;
}

}  // namespace patchprobe
