#include "patchprobe/defense.hpp"

#include <algorithm>
#include <cmath>

#include "patchprobe/artifact_io.hpp"
#include "patchprobe/errors.hpp"
#include "patchprobe/optim.hpp"

namespace patchprobe {

namespace {

void require_differentiable(const Detector& detector, const char* who) {
  if (!detector.differentiable())
    throw UserError(std::string(who) + ": non-differentiable detector backend");
}

void clamp01(std::vector<double>& v) {
  for (double& x : v) x = std::clamp(x, 0.0, 1.0);
}

std::vector<int> batch_indices(int total, int batch, long step, Prng& rng) {
  if (batch <= 0 || batch >= total) {
    std::vector<int> all(total);
    for (int i = 0; i < total; ++i) all[i] = i;
    return all;
  }
  (void)step;
  return rng.sample_without_replacement(total, batch);
}

// Placement of the canary for one pair: configured slot of the top
// benign-side candidate, random fallback otherwise. Candidates depend only on
// the benign image, so this is computed once per pair; the fallback is drawn
// per pair from its own stream.
PixelRect canary_rect_for_pair(const SamplePair& pair, const CanaryTrainConfig& cfg,
                               const Detector& detector, Prng fallback_rng) {
  auto candidates = find_candidates(detector.raw_boxes(pair.benign.image), cfg.loc);
  const int img = pair.benign.image.w;
  if (!candidates.empty()) {
    auto slots = derive_slots(candidates[0], cfg.loc, img);
    for (const auto& s : slots)
      if (s.slot_id == cfg.slot_id) return raster_rect(s.origin, cfg.loc.patch_size, img);
    throw InternalError("canary: unknown slot id " + cfg.slot_id);
  }
  PlacementSlot s = fallback_slot(fallback_rng, cfg.loc, img);
  return raster_rect(s.origin, cfg.loc.patch_size, img);
}

}  // namespace

void CanaryTrainConfig::validate() const {
  if (lambda <= 0) throw UserError("canary config: lambda must be positive");
  if (learning_rate <= 0) throw UserError("canary config: learning_rate must be positive");
  if (max_iters < 0) throw UserError("canary config: max_iters must be >= 0");
  if (patch_size <= 0) throw UserError("canary config: patch_size must be positive");
  if (std::find(kSlotOrder.begin(), kSlotOrder.end(), slot_id) == kSlotOrder.end())
    throw UserError("canary config: unknown slot_id " + slot_id);
  loc.validate();
}

void WoodpeckerTrainConfig::validate() const {
  if (learning_rate <= 0) throw UserError("woodpecker config: learning_rate must be positive");
  if (max_iters < 0) throw UserError("woodpecker config: max_iters must be >= 0");
  if (patch_size <= 0) throw UserError("woodpecker config: patch_size must be positive");
  loc.validate();
}

CanaryForgeResult train_canary(const std::vector<SamplePair>& pairs,
                               const CanaryTrainConfig& cfg, const Detector& detector,
                               const CanaryStepObserver& observer) {
  cfg.validate();
  require_differentiable(detector, "train_canary");
  if (pairs.empty()) throw UserError("train_canary: no training pairs");
  if (cfg.loc.patch_size != cfg.patch_size)
    throw UserError("train_canary: patch_size disagrees with localization config");
  if (cfg.init_class < 0 || cfg.init_class >= detector.contract().class_count)
    throw UserError("train_canary: init_class outside detector label space");

  Prng rng(cfg.seed);
  const int S = cfg.patch_size;

  CanaryForgeResult out;
  out.pair_rects.reserve(pairs.size());
  Prng fallback_base = rng.split("fallback");
  for (size_t i = 0; i < pairs.size(); ++i)
    out.pair_rects.push_back(
        canary_rect_for_pair(pairs[i], cfg, detector, fallback_base.split(uint64_t(i))));

  Image patch = stock_class_image(cfg.init_class, S);

  Adam adam;
  adam.lr = cfg.learning_rate;
  adam.reset(patch.v.size());
  ConvergenceMonitor monitor(cfg.convergence_window, cfg.convergence_rel_tol);
  Prng batch_rng = rng.split("batch");
  const TermSet terms{true, true, false};  // Eq. 2/3: objectness + class only

  struct PairEval {
    double lb = 0, la = 0;
    Image gb, ga;
  };

  for (long step = 0; step < cfg.max_iters; ++step) {
    auto idx = batch_indices(int(pairs.size()), cfg.batch, step, batch_rng);
    std::vector<PairEval> evals(idx.size());
    parallel_for(int(idx.size()), cfg.jobs, [&](int k) {
      const SamplePair& pair = pairs[idx[k]];
      const PixelRect& rect = out.pair_rects[idx[k]];
      LossTarget target{rect.to_box(), cfg.init_class, true};
      Image benign_comp = apply_patch(pair.benign.image, patch,
                                      Point{double(rect.x), double(rect.y)});
      Image adv_comp = apply_patch(pair.adversarial.image, patch,
                                   Point{double(rect.x), double(rect.y)});
      auto b = detector.loss_and_gradient(benign_comp, {target}, terms, rect);
      auto a = detector.loss_and_gradient(adv_comp, {target}, terms, rect);
      evals[k] = PairEval{terms.total(b.terms), terms.total(a.terms), std::move(b.grad),
                          std::move(a.grad)};
    });

    double lb = 0, la = 0;
    std::vector<double> grad(patch.v.size(), 0.0);
    for (const PairEval& e : evals) {
      lb += e.lb;
      la += e.la;
      for (size_t j = 0; j < grad.size(); ++j)
        grad[j] += cfg.lambda * e.gb.v[j] - e.ga.v[j];
    }
    const double inv = 1.0 / double(evals.size());
    lb *= inv;
    la *= inv;
    for (double& g : grad) g *= inv;

    CanaryTraceRow row{step, cfg.lambda * lb - la, lb, la};
    if (!std::isfinite(row.objective))
      throw InternalError("train_canary: non-finite objective at step " + std::to_string(step));
    if (observer) observer(step, patch, row);
    out.trace.push_back(row);

    adam.step(patch.v, grad);
    clamp01(patch.v);
    if (monitor.push(row.objective)) break;
  }

  quantize(patch, 16);  // bundles persist at 16 bits; freeze now so disk == memory
  PatchBundle bundle;
  bundle.pixels = std::move(patch);
  bundle.kind = PatchKind::canary;
  bundle.target_class = cfg.init_class;
  bundle.slot_id = cfg.slot_id;
  bundle.seed = cfg.seed;
  bundle.id = canary_key(detector.contract(), cfg.init_class, cfg.slot_id);
  out.bundle = std::move(bundle);
  return out;
}

std::vector<BenignObjectRecord> collect_benign_objects(const std::vector<Scene>& scenes,
                                                       const Detector& detector) {
  std::vector<BenignObjectRecord> records;
  records.reserve(scenes.size());
  for (const Scene& s : scenes) records.push_back(BenignObjectRecord{detector.detect(s.image)});
  return records;
}

WoodpeckerForgeResult train_woodpecker(const std::vector<SamplePair>& pairs,
                                       const std::vector<BenignObjectRecord>& records,
                                       const WoodpeckerTrainConfig& cfg,
                                       const Detector& detector) {
  cfg.validate();
  require_differentiable(detector, "train_woodpecker");
  if (pairs.empty()) throw UserError("train_woodpecker: no training pairs");
  if (records.size() != pairs.size())
    throw UserError("train_woodpecker: records do not cover the pairs");
  if (cfg.loc.patch_size != cfg.patch_size)
    throw UserError("train_woodpecker: patch_size disagrees with localization config");

  Prng rng(cfg.seed);
  const int S = cfg.patch_size;
  const int img = pairs[0].benign.image.w;

  // Initialization: uniform random pixels.
  Image patch(S, S, 3);
  Prng init_rng = rng.split("init");
  for (double& v : patch.v) v = init_rng.uniform();

  // Slots come from the adversarial side, where perturbed-person candidates
  // live; one of the five (or a fallback) is drawn per pair and step.
  std::vector<std::vector<PlacementSlot>> pair_slots(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    auto candidates = find_candidates(detector.raw_boxes(pairs[i].adversarial.image), cfg.loc);
    if (!candidates.empty()) pair_slots[i] = derive_slots(candidates[0], cfg.loc, img);
  }

  Adam adam;
  adam.lr = cfg.learning_rate;
  adam.reset(patch.v.size());
  ConvergenceMonitor monitor(cfg.convergence_window, cfg.convergence_rel_tol);
  Prng batch_rng = rng.split("batch");
  Prng slot_rng_base = rng.split("slot");
  const TermSet terms{true, true, true};  // Eq. 5/6 add the box term

  WoodpeckerForgeResult out;

  struct PairEval {
    double lb = 0, la = 0;
    Image gb, ga;
    bool skipped = false;
  };

  for (long step = 0; step < cfg.max_iters; ++step) {
    auto idx = batch_indices(int(pairs.size()), cfg.batch, step, batch_rng);
    std::vector<PairEval> evals(idx.size());
    parallel_for(int(idx.size()), cfg.jobs, [&](int k) {
      const int pi = idx[k];
      const SamplePair& pair = pairs[pi];
      if (records[pi].objects.empty()) {
        evals[k].skipped = true;
        return;
      }
      Prng draw = slot_rng_base.split(uint64_t(step)).split(uint64_t(pi));
      PixelRect rect;
      if (!pair_slots[pi].empty()) {
        const PlacementSlot& s = pair_slots[pi][draw.uniform_int(5)];
        rect = raster_rect(s.origin, S, img);
      } else {
        rect = raster_rect(fallback_slot(draw, cfg.loc, img).origin, S, img);
      }
      // Recorded boxes can stick out of the image at the borders; targets are
      // clipped to the visible part.
      std::vector<LossTarget> targets;
      for (const Detection& d : records[pi].objects) {
        Box clipped = clip_box(d.box, pair.benign.image.w);
        if (clipped.valid()) targets.push_back(LossTarget{clipped, d.label, true});
      }
      if (targets.empty()) {
        evals[k].skipped = true;
        return;
      }
      Point origin{double(rect.x), double(rect.y)};
      auto b = detector.loss_and_gradient(apply_patch(pair.benign.image, patch, origin), targets,
                                          terms, rect);
      auto a = detector.loss_and_gradient(apply_patch(pair.adversarial.image, patch, origin),
                                          targets, terms, rect);
      evals[k] = PairEval{terms.total(b.terms), terms.total(a.terms), std::move(b.grad),
                          std::move(a.grad), false};
    });

    double lb = 0, la = 0;
    int used = 0;
    std::vector<double> grad(patch.v.size(), 0.0);
    for (const PairEval& e : evals) {
      if (e.skipped) continue;
      ++used;
      lb += e.lb;
      la += e.la;
      for (size_t j = 0; j < grad.size(); ++j) grad[j] += e.gb.v[j] + e.ga.v[j];
    }
    if (used == 0) throw UserError("train_woodpecker: no pair has recorded benign objects");
    const double inv = 1.0 / used;
    lb *= inv;
    la *= inv;
    for (double& g : grad) g *= inv;

    WoodpeckerTraceRow row{step, lb + la, lb, la};
    if (!std::isfinite(row.total))
      throw InternalError("train_woodpecker: non-finite loss at step " + std::to_string(step));
    out.trace.push_back(row);

    adam.step(patch.v, grad);
    clamp01(patch.v);
    if (monitor.push(row.total)) break;
  }

  quantize(patch, 16);
  PatchBundle bundle;
  bundle.pixels = std::move(patch);
  bundle.kind = PatchKind::woodpecker;
  bundle.seed = cfg.seed;
  out.bundle = std::move(bundle);
  return out;
}

std::string canary_key(const DetectorContract& contract, int class_id,
                       const std::string& slot_id) {
  return "canary/" + contract.class_name(class_id) + "/" + slot_id;
}

PatchPool train_canary_pool(const std::vector<SamplePair>& pairs, const std::vector<int>& classes,
                            const std::vector<std::string>& slots, const CanaryTrainConfig& base,
                            const Detector& detector,
                            std::map<std::string, double>* final_losses) {
  if (classes.empty() || slots.empty())
    throw UserError("train_canary_pool: classes and slots must be nonempty");
  PatchPool pool;
  std::vector<std::string> failures;
  Prng seed_rng(base.seed);
  for (int cls : classes)
    for (const std::string& slot : slots) {
      CanaryTrainConfig cfg = base;
      cfg.init_class = cls;
      cfg.slot_id = slot;
      cfg.seed = seed_rng.split(canary_key(detector.contract(), cls, slot)).next_u64();
      std::string key = canary_key(detector.contract(), cls, slot);
      try {
        auto res = train_canary(pairs, cfg, detector);
        if (final_losses && !res.trace.empty())
          (*final_losses)[key] = res.trace.back().objective;
        pool.canaries.emplace(key, std::move(res.bundle));
      } catch (const std::exception& e) {
        failures.push_back(key + ": " + e.what());
      }
    }
  if (!failures.empty()) {
    std::string msg = "train_canary_pool: " + std::to_string(failures.size()) +
                      " member(s) failed; completed " + std::to_string(pool.canaries.size()) +
                      " of " + std::to_string(classes.size() * slots.size());
    for (const auto& f : failures) msg += "\n  " + f;
    throw UserError(msg);
  }
  return pool;
}

PatchPool train_woodpecker_pool(const std::vector<SamplePair>& pairs,
                                const std::vector<BenignObjectRecord>& records, int count,
                                const WoodpeckerTrainConfig& base, const Detector& detector,
                                std::map<std::string, double>* final_losses) {
  if (count <= 0) throw UserError("train_woodpecker_pool: count must be positive");
  PatchPool pool;
  std::vector<std::string> failures;
  Prng seed_rng(base.seed);
  for (int i = 0; i < count; ++i) {
    char key[32];
    std::snprintf(key, sizeof key, "woodpecker/%02d", i);
    WoodpeckerTrainConfig cfg = base;
    cfg.seed = seed_rng.split(uint64_t(i)).next_u64();
    try {
      auto res = train_woodpecker(pairs, records, cfg, detector);
      res.bundle.id = key;
      if (final_losses && !res.trace.empty()) (*final_losses)[key] = res.trace.back().total;
      pool.woodpeckers.emplace(key, std::move(res.bundle));
    } catch (const std::exception& e) {
      failures.push_back(std::string(key) + ": " + e.what());
    }
  }
  if (!failures.empty()) {
    std::string msg = "train_woodpecker_pool: " + std::to_string(failures.size()) +
                      " member(s) failed; completed " + std::to_string(pool.woodpeckers.size()) +
                      " of " + std::to_string(count);
    for (const auto& f : failures) msg += "\n  " + f;
    throw UserError(msg);
  }
  return pool;
}

namespace {

std::string member_dir_name(const std::string& key) {
  std::string d = key;
  for (char& c : d)
    if (c == '/') c = '_';
  return d;
}

}  // namespace

void save_patch_pool(const std::filesystem::path& dir, const PatchPool& pool,
                     const PoolSaveInfo& info) {
  std::filesystem::create_directories(dir);
  json members = json::object();
  auto save_member = [&](const std::string& key, const PatchBundle& b) {
    std::string sub = member_dir_name(key);
    save_patch_bundle(dir / sub, b);
    json m;
    m["dir"] = sub;
    auto it = info.final_losses.find(key);
    if (it != info.final_losses.end()) m["final_loss"] = it->second;
    members[key] = m;
  };
  for (const auto& [k, b] : pool.canaries) save_member(k, b);
  for (const auto& [k, b] : pool.woodpeckers) save_member(k, b);
  json m;
  m["detector_hash"] = info.detector_hash;
  m["pairs_hash"] = info.pairs_hash;
  m["config_hash"] = info.config_hash;
  m["members"] = members;
  write_json_file(dir / "pool.json", m);
}

PatchPool load_patch_pool(const std::filesystem::path& dir, PoolSaveInfo* info) {
  json m = read_json_file(dir / "pool.json");
  PatchPool pool;
  for (auto it = m.at("members").begin(); it != m.at("members").end(); ++it) {
    PatchBundle b = load_patch_bundle(dir / it.value().at("dir").get<std::string>());
    b.id = it.key();
    if (b.kind == PatchKind::canary)
      pool.canaries.emplace(it.key(), std::move(b));
    else if (b.kind == PatchKind::woodpecker)
      pool.woodpeckers.emplace(it.key(), std::move(b));
    else
      throw UserError("pool member " + it.key() + " has non-defensive kind");
  }
  if (info) {
    info->detector_hash = m.value("detector_hash", "");
    info->pairs_hash = m.value("pairs_hash", "");
    info->config_hash = m.value("config_hash", "");
    for (auto it = m.at("members").begin(); it != m.at("members").end(); ++it)
      if (it.value().contains("final_loss"))
        info->final_losses[it.key()] = it.value()["final_loss"].get<double>();
  }
  return pool;
}

PatchPool merge_pools(const PatchPool& a, const PatchPool& b) {
  PatchPool out = a;
  for (const auto& [k, v] : b.canaries) out.canaries.emplace(k, v);
  for (const auto& [k, v] : b.woodpeckers) out.woodpeckers.emplace(k, v);
  return out;
}

}  // namespace patchprobe
