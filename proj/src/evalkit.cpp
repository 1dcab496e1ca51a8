#include "patchprobe/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "patchprobe/errors.hpp"
#include "patchprobe/plot.hpp"
#include "patchprobe/stats.hpp"
#include "patchprobe/toy_detector.hpp"

namespace patchprobe {

std::optional<double> ConfusionCounts::precision() const {
  if (tp + fp == 0) return std::nullopt;
  return double(tp) / double(tp + fp);
}

std::optional<double> ConfusionCounts::recall() const {
  if (tp + fn == 0) return std::nullopt;
  return double(tp) / double(tp + fn);
}

ConfusionCounts confusion(const std::vector<LabeledVerdict>& labeled) {
  if (labeled.empty()) throw UserError("confusion: empty verdict list");
  ConfusionCounts c;
  for (const LabeledVerdict& lv : labeled) {
    if (lv.truth_adversarial)
      lv.verdict.attacked ? ++c.tp : ++c.fn;
    else
      lv.verdict.attacked ? ++c.fp : ++c.tn;
  }
  return c;
}

std::string ratio_str(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

// ---- pilot tau ----

std::vector<PilotScore> pilot_tau(const std::vector<SamplePair>& samples,
                                  const std::vector<double>& taus, const Detector& detector,
                                  const LocalizationConfig& base, const PilotRubric& rubric) {
  std::vector<PilotScore> scores;
  for (double t : taus) scores.push_back(PilotScore{t, 0});
  if (samples.empty()) return scores;

  for (const SamplePair& sample : samples) {
    auto raw = detector.raw_boxes(sample.adversarial.image);

    // Non-attacked objects: ground truth minus the victims.
    std::vector<Box> clean;
    for (const auto& gt : sample.benign.ground_truth) {
      bool is_victim = false;
      for (const Box& v : sample.victim_boxes)
        if (iou(gt.box, v) > 0.999) {
          is_victim = true;
          break;
        }
      if (!is_victim) clean.push_back(gt.box);
    }

    for (size_t ti = 0; ti < taus.size(); ++ti) {
      LocalizationConfig cfg = base;
      cfg.tau = taus[ti];
      auto candidates = find_candidates(raw, cfg);

      bool near_victim = false, tight = false, clean_clear = true;
      for (const CandidateBox& c : candidates) {
        for (const Box& v : sample.victim_boxes) {
          double o = iou(c.box, v);
          if (o > 0) near_victim = true;
          if (o > 0.5) tight = true;
        }
        for (const Box& b : clean)
          if (iou(c.box, b) > 0) clean_clear = false;
      }
      long s = 0;
      if (rubric.candidate_near_attacked && near_victim) ++s;
      if (rubric.no_candidate_near_clean && clean_clear) ++s;
      if (rubric.tight_candidate && tight) ++s;
      scores[ti].score += s;
    }
  }
  return scores;
}

// ---- pilot size ----

namespace {

double mode_precision_over_pairs(const std::vector<SamplePair>& pairs, const PatchPool& pool,
                                 int mode, const PilotSizeConfig& cfg,
                                 const LocalizationConfig& loc, const Detector& detector,
                                 bool* defined) {
  std::vector<LabeledVerdict> labeled;
  Prng seeds(cfg.seed);
  for (size_t i = 0; i < pairs.size(); ++i) {
    DeploymentPolicy policy;
    policy.mode = mode;
    policy.pool = pool;
    policy.placements_per_image = cfg.placements_per_image;
    policy.randomize = cfg.randomize;
    policy.loc = loc;
    policy.seed = seeds.split(pairs[i].id).next_u64();
    labeled.push_back(LabeledVerdict{run_check(pairs[i].benign.image, policy, detector), false});
    labeled.push_back(
        LabeledVerdict{run_check(pairs[i].adversarial.image, policy, detector), true});
  }
  auto counts = confusion(labeled);
  auto p = counts.precision();
  *defined = p.has_value();
  return p.value_or(0.0);
}

}  // namespace

PilotSizeResult pilot_size(const std::vector<SamplePair>& train_pairs,
                           const std::vector<SamplePair>& eval_pairs,
                           const PilotSizeConfig& cfg, const Detector& detector) {
  if (cfg.sizes.empty()) throw UserError("pilot_size: no sizes to sweep");
  PilotSizeResult result;

  for (int size : cfg.sizes) {
    // Canary member.
    {
      PilotSizeCell cell{"canary", size, false, 0, ""};
      try {
        CanaryTrainConfig c = cfg.canary_base;
        c.patch_size = size;
        c.loc.patch_size = size;
        c.seed = Prng(cfg.seed).split("canary").split(uint64_t(size)).next_u64();
        auto forged = train_canary(train_pairs, c, detector);
        PatchPool pool;
        pool.canaries.emplace(forged.bundle.id, forged.bundle);
        LocalizationConfig loc = c.loc;
        bool defined = false;
        double p = mode_precision_over_pairs(eval_pairs, pool, 1, cfg, loc, detector, &defined);
        if (defined) {
          cell.ok = true;
          cell.precision = p;
        } else {
          cell.note = "no alerts on the eval set; precision undefined";
        }
      } catch (const std::exception& e) {
        cell.note = e.what();
      }
      result.cells.push_back(std::move(cell));
    }
    // Woodpecker member.
    {
      PilotSizeCell cell{"woodpecker", size, false, 0, ""};
      try {
        WoodpeckerTrainConfig w = cfg.woodpecker_base;
        w.patch_size = size;
        w.loc.patch_size = size;
        w.seed = Prng(cfg.seed).split("woodpecker").split(uint64_t(size)).next_u64();
        std::vector<Scene> benign;
        for (const auto& p : train_pairs) benign.push_back(p.benign);
        auto records = collect_benign_objects(benign, detector);
        auto forged = train_woodpecker(train_pairs, records, w, detector);
        forged.bundle.id = "woodpecker/00";
        PatchPool pool;
        pool.woodpeckers.emplace(forged.bundle.id, forged.bundle);
        LocalizationConfig loc = w.loc;
        bool defined = false;
        double p = mode_precision_over_pairs(eval_pairs, pool, 2, cfg, loc, detector, &defined);
        if (defined) {
          cell.ok = true;
          cell.precision = p;
        } else {
          cell.note = "no alerts on the eval set; precision undefined";
        }
      } catch (const std::exception& e) {
        cell.note = e.what();
      }
      result.cells.push_back(std::move(cell));
    }
  }

  auto select = [&](const std::string& kind) {
    int best_size = 0;
    double best = -1;
    for (const auto& c : result.cells)
      if (c.kind == kind && c.ok && c.precision > best) {
        best = c.precision;
        best_size = c.size;
      }
    return best_size != 0 ? best_size : cfg.sizes.front();
  };
  result.selected_canary_size = select("canary");
  result.selected_woodpecker_size = select("woodpecker");
  return result;
}

// ---- experiment orchestration ----

namespace {

struct ImageCase {
  std::string id;
  const Image* image;
  bool adversarial;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  // Reject missing artifacts before any compute.
  for (const auto& p :
       {cfg.detector_dir / "weights.bin", cfg.pools_dir / "pool.json", cfg.pairs_dir / "pairs.json"})
    if (!std::filesystem::exists(p))
      throw UserError("run_experiment: missing input artifact " + p.string());
  for (int m : cfg.modes)
    if (m < 1 || m > 3) throw UserError("run_experiment: bad mode " + std::to_string(m));

  auto detector = load_toy_detector(cfg.detector_dir);
  PatchPool pool = load_patch_pool(cfg.pools_dir);
  auto pairs = load_pairs(cfg.pairs_dir);
  if (pairs.empty()) throw UserError("run_experiment: empty pair set");

  const std::string cfg_hash = config_hash(cfg.config_snapshot);
  std::filesystem::create_directories(cfg.out_dir);

  json inputs;
  inputs["config_hash"] = cfg_hash;
  inputs["detector_weights_sha256"] = sha256_file(cfg.detector_dir / "weights.bin");
  inputs["pool_manifest_sha256"] = sha256_file(cfg.pools_dir / "pool.json");
  inputs["pairs_manifest_sha256"] = sha256_file(cfg.pairs_dir / "pairs.json");
  write_json_file(cfg.out_dir / "inputs.json", inputs);
  write_json_file(cfg.out_dir / "config.json", cfg.config_snapshot);

  const uint64_t weights_before = detector->weights_fingerprint();

  std::vector<ImageCase> cases;
  for (const SamplePair& p : pairs) {
    cases.push_back(ImageCase{p.id + "/benign", &p.benign.image, false});
    cases.push_back(ImageCase{p.id + "/adversarial", &p.adversarial.image, true});
  }

  std::ofstream verdicts(cfg.out_dir / "verdicts.jsonl");
  if (!verdicts) throw UserError("cannot write verdicts file");
  verdicts << json{{"_meta", {{"config_hash", cfg_hash}}}}.dump() << "\n";

  Prng master(cfg.seed);
  std::map<int, std::vector<LabeledVerdict>> labeled;
  std::map<int, std::vector<double>> times;
  std::map<std::string, std::map<int, bool>> attacked_by_mode;

  for (const ImageCase& c : cases) {
    const uint64_t image_seed = master.split(c.id).next_u64();
    for (int mode : cfg.modes) {
      DeploymentPolicy policy;
      policy.mode = mode;
      policy.pool = pool;
      policy.placements_per_image = cfg.placements_per_image;
      policy.randomize = cfg.randomize;
      policy.loc = cfg.loc;
      policy.seed = image_seed;  // shared across modes: Mode #3 is the exact union

      auto t0 = std::chrono::steady_clock::now();
      Verdict v = run_check(*c.image, policy, *detector);
      auto t1 = std::chrono::steady_clock::now();
      times[mode].push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());

      json rec = verdict_to_json(c.id, mode, v);
      rec["truth"] = c.adversarial ? "adversarial" : "benign";
      verdicts << rec.dump() << "\n";

      labeled[mode].push_back(LabeledVerdict{v, c.adversarial});
      attacked_by_mode[c.id][mode] = v.attacked;
    }
  }
  verdicts.close();

  if (detector->weights_fingerprint() != weights_before)
    throw InternalError("run_experiment: detector weights mutated during checks");

  // Union invariant, asserted on every run that evaluated all three modes.
  bool has123 = std::count(cfg.modes.begin(), cfg.modes.end(), 1) &&
                std::count(cfg.modes.begin(), cfg.modes.end(), 2) &&
                std::count(cfg.modes.begin(), cfg.modes.end(), 3);
  if (has123) {
    for (const auto& [id, by_mode] : attacked_by_mode)
      if (by_mode.at(3) != (by_mode.at(1) || by_mode.at(2)))
        throw InternalError("run_experiment: Mode #3 union invariant violated on " + id);
  }

  ExperimentResult result;
  for (int mode : cfg.modes) {
    ModeOutcome mo;
    mo.counts = confusion(labeled[mode]);
    mo.median_ms = median(times[mode]);
    result.modes[mode] = mo;
  }
  result.verdicts_path = cfg.out_dir / "verdicts.jsonl";
  result.confusion_path = cfg.out_dir / "confusion.tsv";
  write_confusion_tsv(result.confusion_path, result.modes, cfg_hash);

  std::ostringstream timing;
  timing << "# config_hash=" << cfg_hash << "\nmode\tmedian_ms\tchecks\n";
  for (int mode : cfg.modes) {
    timing << mode << "\t" << result.modes[mode].median_ms << "\t" << times[mode].size() << "\n";
  }
  write_text_file(cfg.out_dir / "timing.tsv", timing.str());
  return result;
}

void write_confusion_tsv(const std::filesystem::path& path,
                         const std::map<int, ModeOutcome>& modes,
                         const std::string& config_hash) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << "\n";
  out << "mode\ttp\ttn\tfp\tfn\tprecision\trecall\n";
  for (const auto& [mode, mo] : modes) {
    out << mode << "\t" << mo.counts.tp << "\t" << mo.counts.tn << "\t" << mo.counts.fp << "\t"
        << mo.counts.fn << "\t" << ratio_str(mo.counts.precision()) << "\t"
        << ratio_str(mo.counts.recall()) << "\n";
  }
  write_text_file(path, out.str());
}

std::map<int, ConfusionCounts> confusion_from_verdicts(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw UserError("cannot read " + path.string());
  std::map<int, std::vector<LabeledVerdict>> labeled;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.contains("_meta")) continue;
    LabeledVerdict lv;
    lv.verdict = verdict_from_json(j);
    lv.truth_adversarial = j.at("truth").get<std::string>() == "adversarial";
    labeled[j.at("mode").get<int>()].push_back(std::move(lv));
  }
  std::map<int, ConfusionCounts> out;
  for (auto& [mode, lvs] : labeled) out[mode] = confusion(lvs);
  return out;
}

// ---- adaptive experiment ----

std::vector<DepOutcome> run_adaptive_experiment(const std::vector<Scene>& scenes,
                                                const PatchPool& pools, const Detector& detector,
                                                const AdaptiveConfig& cfg,
                                                std::map<int, AttackForgeResult>* forges) {
  if (scenes.empty()) throw UserError("adaptive experiment: no scenes");
  const int person = detector.contract().person_class;
  const int img = detector.contract().input_size;

  std::vector<DepOutcome> rows;
  for (int dep : cfg.deps) {
    DeploymentKnowledge knowledge = dep_strategy_pool(dep, pools, detector.contract(), img);
    AttackConfig acfg = cfg.attack;
    acfg.seed = Prng(cfg.seed).split("forge").split(uint64_t(dep)).next_u64();

    AttackForgeResult forged =
        knowledge.canary_set.empty()
            ? forge_adaptive_vs_woodpecker(scenes, detector, knowledge, acfg)
            : forge_adaptive_vs_canary(scenes, detector, knowledge, acfg);

    Image patch8 = forged.bundle.pixels;
    quantize(patch8, 8);  // the attacker deploys at scene precision

    DepOutcome row;
    row.dep = dep;
    row.description = dep_strategy_description(dep);
    Prng draw_rng = Prng(cfg.seed).split("deploy").split(uint64_t(dep));

    for (size_t si = 0; si < scenes.size(); ++si) {
      const Scene& scene = scenes[si];
      auto benign_dets = detector.detect(scene.image);
      std::vector<Box> observed_persons;
      for (const auto& gt : scene.ground_truth)
        if (gt.class_id == person && object_detected(benign_dets, gt.box, person))
          observed_persons.push_back(gt.box);
      if (observed_persons.empty()) continue;
      ++row.scenes;

      Image attacked = apply_attack_to_scene(scene, patch8, person);
      auto adv_dets = detector.detect(attacked);
      bool hidden = true;
      for (const Box& p : observed_persons)
        if (object_detected(adv_dets, p, person)) hidden = false;
      if (!hidden) continue;
      ++row.hidden;

      // The deployed defense draws one (content, position) pair per input.
      Prng scene_rng = draw_rng.split(uint64_t(si));
      Verdict verdict;
      if (!knowledge.canary_set.empty()) {
        const auto& pick = knowledge.canary_set[scene_rng.uniform_int(
            int(knowledge.canary_set.size()))];
        verdict = canary_check_with_placements(attacked, {pick}, detector);
      } else {
        const auto& pick = knowledge.woodpecker_set[scene_rng.uniform_int(
            int(knowledge.woodpecker_set.size()))];
        verdict = woodpecker_check_with_placements(attacked, {pick}, detector);
      }
      if (!verdict.attacked) ++row.bypass;
    }

    if (forges) (*forges)[dep] = std::move(forged);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_adaptive_tsv(const std::filesystem::path& path, const std::vector<DepOutcome>& rows,
                        const std::string& config_hash) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << "\n";
  out << "dep\tdescription\tscenes\thidden\tbypass\n";
  for (const auto& r : rows)
    out << r.dep << "\t" << r.description << "\t" << r.scenes << "\t" << r.hidden << "\t"
        << r.bypass << "\n";
  write_text_file(path, out.str());
}

// ---- report ----

namespace {

std::string file_config_hash(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::string line;
  if (f && std::getline(f, line) && line.rfind("# config_hash=", 0) == 0)
    return line.substr(14);
  return "";
}

}  // namespace

std::vector<std::filesystem::path> render_report(const std::filesystem::path& run_dir) {
  std::vector<std::filesystem::path> emitted;
  auto plots = run_dir / "plots";

  auto confusion_path = run_dir / "confusion.tsv";
  if (std::filesystem::exists(confusion_path)) {
    std::ifstream f(confusion_path);
    std::string line;
    std::vector<std::string> labels;
    std::vector<double> precs, recs;
    while (std::getline(f, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("mode\t", 0) == 0) continue;
      std::istringstream row(line);
      std::string mode, tp, tn, fp, fn, prec, rec;
      std::getline(row, mode, '\t');
      std::getline(row, tp, '\t');
      std::getline(row, tn, '\t');
      std::getline(row, fp, '\t');
      std::getline(row, fn, '\t');
      std::getline(row, prec, '\t');
      std::getline(row, rec, '\t');
      labels.push_back("MODE " + mode);
      precs.push_back(prec == "undefined" ? 0.0 : std::stod(prec));
      recs.push_back(rec == "undefined" ? 0.0 : std::stod(rec));
    }
    if (!labels.empty()) {
      std::string h = file_config_hash(confusion_path);
      plot_bars(plots / "precision.png", "PRECISION PER MODE", labels, precs, 1.0, h);
      plot_bars(plots / "recall.png", "RECALL PER MODE", labels, recs, 1.0, h);
      emitted.push_back(plots / "precision.png");
      emitted.push_back(plots / "recall.png");
    }
  }

  auto adaptive_path = run_dir / "adaptive.tsv";
  if (std::filesystem::exists(adaptive_path)) {
    std::ifstream f(adaptive_path);
    std::string line;
    std::vector<std::string> labels;
    std::vector<double> bypass;
    double vmax = 1;
    while (std::getline(f, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("dep\t", 0) == 0) continue;
      std::istringstream row(line);
      std::string dep, desc, scenes, hidden, byp;
      std::getline(row, dep, '\t');
      std::getline(row, desc, '\t');
      std::getline(row, scenes, '\t');
      std::getline(row, hidden, '\t');
      std::getline(row, byp, '\t');
      labels.push_back("DEP #" + dep);
      bypass.push_back(std::stod(byp));
      vmax = std::max(vmax, std::stod(scenes));
    }
    if (!labels.empty()) {
      plot_bars(plots / "bypass.png", "ADAPTIVE BYPASS COUNT PER DEPLOYMENT", labels, bypass,
                vmax, file_config_hash(adaptive_path));
      emitted.push_back(plots / "bypass.png");
    }
  }

  for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
    auto name = entry.path().filename().string();
    if (name.size() < 10 || name.substr(name.size() - 10) != ".trace.csv") continue;
    std::ifstream f(entry.path());
    std::string header;
    std::getline(f, header);
    std::vector<std::string> cols;
    {
      std::istringstream h(header);
      std::string c;
      while (std::getline(h, c, ',')) cols.push_back(c);
    }
    std::vector<PlotSeries> series;
    for (size_t i = 1; i < cols.size(); ++i) series.push_back(PlotSeries{cols[i], {}});
    std::string line;
    while (std::getline(f, line)) {
      std::istringstream row(line);
      std::string cell;
      size_t i = 0;
      while (std::getline(row, cell, ',')) {
        if (i >= 1 && i - 1 < series.size()) series[i - 1].values.push_back(std::stod(cell));
        ++i;
      }
    }
    if (!series.empty() && !series[0].values.empty()) {
      auto out = plots / (name.substr(0, name.size() - 10) + "_trace.png");
      plot_lines(out, "LOSS TRACE: " + name.substr(0, name.size() - 10), series, "");
      emitted.push_back(out);
    }
  }
  return emitted;
}

void write_attack_trace(const std::filesystem::path& path,
                        const std::vector<AttackTraceRow>& trace) {
  std::ostringstream out;
  out << "step,total,detect,deploy,regu\n";
  for (const auto& r : trace)
    out << r.step << "," << r.total << "," << r.detect_term << "," << r.deploy_term << ","
        << r.regu_term << "\n";
  write_text_file(path, out.str());
}

void write_canary_trace(const std::filesystem::path& path,
                        const std::vector<CanaryTraceRow>& trace) {
  std::ostringstream out;
  out << "step,objective,l_benign,l_adv\n";
  for (const auto& r : trace)
    out << r.step << "," << r.objective << "," << r.l_benign << "," << r.l_adv << "\n";
  write_text_file(path, out.str());
}

void write_woodpecker_trace(const std::filesystem::path& path,
                            const std::vector<WoodpeckerTraceRow>& trace) {
  std::ostringstream out;
  out << "step,total,l_benign,l_adv\n";
  for (const auto& r : trace)
    out << r.step << "," << r.total << "," << r.l_benign << "," << r.l_adv << "\n";
  write_text_file(path, out.str());
}

}  // namespace patchprobe
