#include "patchprobe/corpus.hpp"

#include <algorithm>
#include <cmath>

#include "patchprobe/artifact_io.hpp"
#include "patchprobe/errors.hpp"

namespace patchprobe {

namespace {

void clamp01(Image& img) {
  for (double& v : img.v) v = std::clamp(v, 0.0, 1.0);
}

void fill_rect(Image& img, int x0, int y0, int w, int h, double r, double g, double b) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
}

void add_speckle(Image& img, double amp, Prng& rng) {
  for (double& v : img.v) v += rng.uniform(-amp, amp);
}

Image render_occluder(int size, Prng& rng) {
  Image block(size, size, 3);
  switch (rng.uniform_int(3)) {
    case 0:  // noise
      for (double& v : block.v) v = rng.uniform();
      break;
    case 1: {  // solid
      double r = rng.uniform(), g = rng.uniform(), b = rng.uniform();
      fill_rect(block, 0, 0, size, size, r, g, b);
      break;
    }
    default: {  // stripes
      double r0 = rng.uniform(), g0 = rng.uniform(), b0 = rng.uniform();
      double r1 = rng.uniform(), g1 = rng.uniform(), b1 = rng.uniform();
      for (int y = 0; y < size; ++y) {
        bool a = (y / 3) % 2 == 0;
        fill_rect(block, 0, y, size, 1, a ? r0 : r1, a ? g0 : g1, a ? b0 : b1);
      }
    }
  }
  clamp01(block);
  return block;
}

void paste(Image& dst, const Image& src, int x0, int y0) {
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x)
      for (int ch = 0; ch < 3; ++ch) dst.at(y0 + y, x0 + x, ch) = src.at(y, x, ch);
}

bool rects_intersect(const Box& a, const Box& b, double margin) {
  return a.x - margin < b.x2() && b.x - margin < a.x2() && a.y - margin < b.y2() &&
         b.y - margin < a.y2();
}

}  // namespace

void SceneConfig::validate() const {
  if (image_size < 16) throw UserError("scene: image_size too small");
  if (min_objects < 0 || max_objects < min_objects)
    throw UserError("scene: bad object count range");
  if (min_persons > min_objects) throw UserError("scene: min_persons exceeds min_objects");
  if (person_w_max > image_size || person_h_max > image_size ||
      object_max > image_size || occluder_size > image_size)
    throw UserError("scene: objects cannot fit in the image");
  double worst = std::max(person_w_max * person_h_max, object_max * object_max);
  if (double(max_objects) * worst > 0.8 * image_size * image_size)
    throw UserError("scene: infeasible config, objects cannot fit");
  for (int c : class_palette)
    if (c < 0) throw UserError("scene: negative class id in palette");
}

Image render_class_glyph(int class_id, int w, int h, Prng& rng) {
  Image g(h, w, 3);
  switch (class_id) {
    case 0: {  // person proxy: head band, shirt, pants
      double shirt_r = rng.uniform(0.15, 0.9), shirt_g = rng.uniform(0.15, 0.9),
             shirt_b = rng.uniform(0.15, 0.9);
      double pants_r = rng.uniform(0.05, 0.45), pants_g = rng.uniform(0.05, 0.45),
             pants_b = rng.uniform(0.05, 0.45);
      int head = std::max(1, int(0.15 * h));
      int torso = std::max(1, int(0.55 * h));
      fill_rect(g, 0, 0, w, head, 0.85, 0.72, 0.58);
      fill_rect(g, 0, head, w, torso - head, shirt_r, shirt_g, shirt_b);
      fill_rect(g, 0, torso, w, h - torso, pants_r, pants_g, pants_b);
      add_speckle(g, 0.03, rng);
      break;
    }
    case 1: {  // block distractor: checkerboard
      double r0 = rng.uniform(0.1, 0.9), g0 = rng.uniform(0.1, 0.9), b0 = rng.uniform(0.1, 0.9);
      double r1 = rng.uniform(0.1, 0.9), g1 = rng.uniform(0.1, 0.9), b1 = rng.uniform(0.1, 0.9);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          bool a = ((x / 4) + (y / 4)) % 2 == 0;
          g.at(y, x, 0) = a ? r0 : r1;
          g.at(y, x, 1) = a ? g0 : g1;
          g.at(y, x, 2) = a ? b0 : b1;
        }
      add_speckle(g, 0.02, rng);
      break;
    }
    case 2: {  // zebra: diagonal stripes
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          bool a = ((x + y) / 3) % 2 == 0;
          double v = a ? 0.92 : 0.08;
          g.at(y, x, 0) = g.at(y, x, 1) = g.at(y, x, 2) = v;
        }
      add_speckle(g, 0.02, rng);
      break;
    }
    case 3: {  // elephant: gray body, darker lower band
      double base = rng.uniform(0.45, 0.55);
      fill_rect(g, 0, 0, w, h, base, base, base * 1.02);
      int band = std::max(1, int(0.3 * h));
      fill_rect(g, 0, h - band, w, band, base * 0.75, base * 0.75, base * 0.78);
      add_speckle(g, 0.04, rng);
      break;
    }
    case 4: {  // boat: sky, white sail triangle, dark hull
      fill_rect(g, 0, 0, w, h, 0.55, 0.75, 0.92);
      int hull = std::max(1, int(0.3 * h));
      fill_rect(g, 0, h - hull, w, hull, 0.10, 0.14, 0.38);
      for (int y = int(0.08 * h); y < h - hull; ++y) {
        double spread = 0.45 * w * (double(y) / std::max(1, h - hull));
        int x0 = std::max(0, int(w / 2.0 - spread));
        int x1 = std::min(w, int(w / 2.0 + spread) + 1);
        for (int x = x0; x < x1; ++x) {
          g.at(y, x, 0) = 0.96;
          g.at(y, x, 1) = 0.96;
          g.at(y, x, 2) = 0.94;
        }
      }
      add_speckle(g, 0.015, rng);
      break;
    }
    case 5: {  // cow: white body with dark blobs
      fill_rect(g, 0, 0, w, h, 0.93, 0.92, 0.9);
      int blobs = 3 + rng.uniform_int(3);
      for (int i = 0; i < blobs; ++i) {
        double cx = rng.uniform(0.15, 0.85) * w, cy = rng.uniform(0.15, 0.85) * h;
        double rx = rng.uniform(0.12, 0.25) * w, ry = rng.uniform(0.12, 0.25) * h;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            double dx = (x - cx) / rx, dy = (y - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) {
              g.at(y, x, 0) = 0.06;
              g.at(y, x, 1) = 0.05;
              g.at(y, x, 2) = 0.06;
            }
          }
      }
      add_speckle(g, 0.02, rng);
      break;
    }
    case 6: {  // toaster: metallic gradient with two dark slots
      for (int x = 0; x < w; ++x) {
        double v = 0.55 + 0.28 * std::sin(M_PI * double(x) / w);
        fill_rect(g, x, 0, 1, h, v, v, v * 1.05);
      }
      int slot_w = std::max(1, w / 8), slot_h = std::max(1, h / 4);
      int sy = std::max(0, int(0.1 * h));
      fill_rect(g, std::max(0, w / 3 - slot_w / 2), sy, slot_w, slot_h, 0.12, 0.12, 0.14);
      fill_rect(g, std::min(w - slot_w, 2 * w / 3 - slot_w / 2), sy, slot_w, slot_h, 0.12, 0.12,
                0.14);
      add_speckle(g, 0.02, rng);
      break;
    }
    default: {  // unknown class: hatched magenta, clearly out of palette
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          bool a = (x / 2 + y / 2) % 2 == 0;
          g.at(y, x, 0) = a ? 0.9 : 0.4;
          g.at(y, x, 1) = 0.1;
          g.at(y, x, 2) = a ? 0.9 : 0.4;
        }
    }
  }
  clamp01(g);
  return g;
}

Image stock_class_image(int class_id, int size) {
  Prng rng(Prng(0x57D0C0FFEEull).split(uint64_t(class_id)).next_u64());
  return render_class_glyph(class_id, size, size, rng);
}

Scene synth_scene(uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Prng rng(seed);
  Scene scene;
  scene.image = Image(cfg.image_size, cfg.image_size, 3);

  double base_r = rng.uniform(0.64, 0.80), base_g = rng.uniform(0.64, 0.80),
         base_b = rng.uniform(0.64, 0.80);
  for (int y = 0; y < cfg.image_size; ++y)
    for (int x = 0; x < cfg.image_size; ++x) {
      scene.image.at(y, x, 0) = base_r + rng.uniform(-cfg.background_noise, cfg.background_noise);
      scene.image.at(y, x, 1) = base_g + rng.uniform(-cfg.background_noise, cfg.background_noise);
      scene.image.at(y, x, 2) = base_b + rng.uniform(-cfg.background_noise, cfg.background_noise);
    }

  int n = cfg.min_objects + (cfg.max_objects > cfg.min_objects
                                 ? rng.uniform_int(cfg.max_objects - cfg.min_objects + 1)
                                 : 0);
  for (int i = 0; i < n; ++i) {
    int cls;
    if (i < cfg.min_persons) {
      cls = 0;
    } else {
      if (cfg.class_palette.empty()) break;
      cls = cfg.class_palette[rng.uniform_int(int(cfg.class_palette.size()))];
    }
    int w, h;
    if (cls == 0) {
      w = int(cfg.person_w_min) + rng.uniform_int(int(cfg.person_w_max - cfg.person_w_min) + 1);
      h = int(cfg.person_h_min) + rng.uniform_int(int(cfg.person_h_max - cfg.person_h_min) + 1);
    } else {
      w = int(cfg.object_min) + rng.uniform_int(int(cfg.object_max - cfg.object_min) + 1);
      h = w;
    }
    // Rejection-sample a non-overlapping integer position.
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      int x0 = rng.uniform_int(cfg.image_size - w + 1);
      int y0 = rng.uniform_int(cfg.image_size - h + 1);
      Box b{double(x0), double(y0), double(w), double(h)};
      bool clash = false;
      for (const auto& gt : scene.ground_truth)
        if (rects_intersect(b, gt.box, 2.0)) {
          clash = true;
          break;
        }
      if (clash) continue;
      Image glyph = render_class_glyph(cls, w, h, rng);
      paste(scene.image, glyph, x0, y0);
      scene.ground_truth.push_back({b, cls});
      placed = true;
    }
  }

  // Occlusion augmentation.
  for (const auto& gt : scene.ground_truth) {
    if (gt.class_id != 0 || rng.uniform() >= cfg.occluder_on_person_prob) continue;
    Image block = render_occluder(cfg.occluder_size, rng);
    Point o = attack_origin_for(gt.box, cfg.occluder_size);
    PixelRect r = raster_rect(o, cfg.occluder_size, cfg.image_size);
    paste(scene.image, block, r.x, r.y);
  }
  if (rng.uniform() < cfg.occluder_on_background_prob) {
    Image block = render_occluder(cfg.occluder_size, rng);
    for (int attempt = 0; attempt < 50; ++attempt) {
      int x0 = rng.uniform_int(cfg.image_size - cfg.occluder_size + 1);
      int y0 = rng.uniform_int(cfg.image_size - cfg.occluder_size + 1);
      Box b{double(x0), double(y0), double(cfg.occluder_size), double(cfg.occluder_size)};
      bool clash = false;
      for (const auto& gt : scene.ground_truth)
        if (rects_intersect(b, gt.box, 2.0)) {
          clash = true;
          break;
        }
      if (clash) continue;
      paste(scene.image, block, x0, y0);
      break;
    }
  }

  clamp01(scene.image);
  // Scenes live on the 8-bit grid so that PNG persistence is lossless.
  quantize(scene.image, 8);
  return scene;
}

std::vector<Scene> synth_scenes(uint64_t seed, const SceneConfig& cfg, int count) {
  std::vector<Scene> scenes;
  scenes.reserve(count);
  Prng master(seed);
  for (int i = 0; i < count; ++i) scenes.push_back(synth_scene(master.split(uint64_t(i)).next_u64(), cfg));
  return scenes;
}

Image apply_patch(const Image& image, const Image& patch, Point origin) {
  if (patch.h != patch.w || patch.c != 3) throw UserError("apply_patch: patch must be square RGB");
  if (patch.w > image.w || patch.h > image.h)
    throw UserError("apply_patch: origin outside clampable range (patch larger than image)");
  if (image.h != image.w) throw UserError("apply_patch: image must be square");
  PixelRect r = raster_rect(origin, patch.w, image.w);
  Image out = image;
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x)
      for (int ch = 0; ch < 3; ++ch) out.at(r.y + y, r.x + x, ch) = patch.at(y, x, ch);
  return out;
}

std::string to_string(PatchKind k) {
  switch (k) {
    case PatchKind::canary: return "canary";
    case PatchKind::woodpecker: return "woodpecker";
    case PatchKind::attack: return "attack";
    case PatchKind::adaptive: return "adaptive";
  }
  return "attack";
}

PatchKind patch_kind_from_string(const std::string& s) {
  if (s == "canary") return PatchKind::canary;
  if (s == "woodpecker") return PatchKind::woodpecker;
  if (s == "attack") return PatchKind::attack;
  if (s == "adaptive") return PatchKind::adaptive;
  throw UserError("unknown patch kind: " + s);
}

bool object_detected(const std::vector<Detection>& dets, const Box& truth, int class_id,
                     double iou_min) {
  for (const Detection& d : dets)
    if (d.label == class_id && iou(d.box, truth) >= iou_min) return true;
  return false;
}

Point attack_origin_for(const Box& victim, int patch_size) {
  return Point{victim.cx() - patch_size / 2.0, victim.y + victim.h / 3.0 - patch_size / 2.0};
}

std::vector<SamplePair> build_pairs(const std::vector<Scene>& benign_scenes,
                                    const PatchBundle& attack_patch, const Detector& detector,
                                    const BuildPairsOptions& opts) {
  if (benign_scenes.empty()) throw UserError("build_pairs: empty benign scene list");
  Image patch8 = attack_patch.pixels;
  quantize(patch8, 8);  // deployed pairs must survive 8-bit persistence bit-exactly

  std::vector<SamplePair> pairs;
  for (size_t i = 0; i < benign_scenes.size(); ++i) {
    const Scene& benign = benign_scenes[i];
    Scene adv = benign;
    std::vector<PixelRect> rects;
    for (const auto& gt : benign.ground_truth) {
      if (gt.class_id != detector.contract().person_class) continue;
      Point origin = attack_origin_for(gt.box, patch8.w);
      adv.image = apply_patch(adv.image, patch8, origin);
      rects.push_back(raster_rect(origin, patch8.w, adv.image.w));
    }
    if (rects.empty()) continue;

    auto benign_dets = detector.detect(benign.image);
    auto adv_dets = detector.detect(adv.image);
    std::vector<Box> victims;
    for (const auto& gt : benign.ground_truth) {
      if (gt.class_id != detector.contract().person_class) continue;
      if (object_detected(benign_dets, gt.box, gt.class_id) &&
          !object_detected(adv_dets, gt.box, gt.class_id))
        victims.push_back(gt.box);
    }
    if (victims.empty()) continue;

    SamplePair p;
    p.benign = benign;
    p.adversarial = std::move(adv);
    p.attack_patch_id = attack_patch.id;
    p.victim_boxes = std::move(victims);
    p.attack_rects = std::move(rects);
    char buf[32];
    std::snprintf(buf, sizeof buf, "pair_%04zu", pairs.size());
    p.id = buf;
    pairs.push_back(std::move(p));
    if (opts.max_pairs > 0 && int(pairs.size()) >= opts.max_pairs) break;
  }
  if (pairs.empty()) throw UserError("build_pairs: attack ineffective, zero successful pairs");
  return pairs;
}

uint64_t scene_fingerprint(const Scene& s) {
  uint64_t h = fnv1a64_bytes(s.image.v.data(), s.image.v.size() * sizeof(double));
  for (const auto& gt : s.ground_truth) {
    h = fnv1a64_bytes(&gt.box, sizeof gt.box, h);
    h = fnv1a64_bytes(&gt.class_id, sizeof gt.class_id, h);
  }
  return h;
}

// ---- persistence ----

namespace {

json box_to_json(const Box& b) { return json::array({b.x, b.y, b.w, b.h}); }
Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw UserError("bad box in manifest");
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json rect_to_json(const PixelRect& r) { return json::array({r.x, r.y, r.w, r.h}); }
PixelRect rect_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw UserError("bad rect in manifest");
  return PixelRect{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

json truth_to_json(const std::vector<GroundTruthObject>& gts) {
  json arr = json::array();
  for (const auto& gt : gts) arr.push_back({{"box", box_to_json(gt.box)}, {"class", gt.class_id}});
  return arr;
}

std::vector<GroundTruthObject> truth_from_json(const json& arr) {
  std::vector<GroundTruthObject> gts;
  for (const auto& e : arr) gts.push_back({box_from_json(e.at("box")), e.at("class").get<int>()});
  return gts;
}

}  // namespace

void save_scenes(const std::filesystem::path& dir, const std::vector<Scene>& scenes,
                 const std::string& cfg_hash) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["config_hash"] = cfg_hash;
  json list = json::array();
  for (size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu.png", i);
    write_png((dir / name).string(), scenes[i].image, 8, {{"config_hash", cfg_hash}});
    list.push_back({{"file", name}, {"ground_truth", truth_to_json(scenes[i].ground_truth)}});
  }
  manifest["scenes"] = std::move(list);
  write_json_file(dir / "scenes.json", manifest);
}

std::vector<Scene> load_scenes(const std::filesystem::path& dir) {
  json manifest = read_json_file(dir / "scenes.json");
  std::vector<Scene> scenes;
  for (const auto& e : manifest.at("scenes")) {
    Scene s;
    s.image = read_png((dir / e.at("file").get<std::string>()).string());
    s.ground_truth = truth_from_json(e.at("ground_truth"));
    scenes.push_back(std::move(s));
  }
  return scenes;
}

void save_patch_bundle(const std::filesystem::path& dir, const PatchBundle& bundle) {
  std::filesystem::create_directories(dir);
  Image px = bundle.pixels;
  quantize(px, 16);
  write_png((dir / "pixels.png").string(), px, 16, {{"config_hash", bundle.config_hash}});
  write_png((dir / "preview.png").string(), px, 8, {{"config_hash", bundle.config_hash}});
  json m;
  m["kind"] = to_string(bundle.kind);
  m["target_class"] = bundle.target_class;
  m["slot_id"] = bundle.slot_id;
  m["size"] = bundle.size();
  m["seed"] = bundle.seed;
  m["config_hash"] = bundle.config_hash;
  m["id"] = bundle.id;
  m["pixels_sha256"] = sha256_file(dir / "pixels.png");
  write_json_file(dir / "manifest.json", m);
}

PatchBundle load_patch_bundle(const std::filesystem::path& dir) {
  json m = read_json_file(dir / "manifest.json");
  PatchBundle b;
  b.pixels = read_png((dir / "pixels.png").string());
  b.kind = patch_kind_from_string(m.at("kind").get<std::string>());
  b.target_class = m.at("target_class").get<int>();
  b.slot_id = m.at("slot_id").get<std::string>();
  b.seed = m.at("seed").get<uint64_t>();
  b.config_hash = m.at("config_hash").get<std::string>();
  b.id = m.at("id").get<std::string>();
  if (b.pixels.w != m.at("size").get<int>() || b.pixels.h != b.pixels.w)
    throw UserError("patch bundle " + dir.string() + ": pixel size mismatch");
  return b;
}

void save_pairs(const std::filesystem::path& dir, const std::vector<SamplePair>& pairs,
                const std::string& cfg_hash, int patch_size) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["config_hash"] = cfg_hash;
  manifest["patch_size"] = patch_size;
  manifest["attack_patch_id"] = pairs.empty() ? "" : pairs[0].attack_patch_id;
  json list = json::array();
  for (size_t i = 0; i < pairs.size(); ++i) {
    const SamplePair& p = pairs[i];
    char bname[32], aname[32];
    std::snprintf(bname, sizeof bname, "benign_%04zu.png", i);
    std::snprintf(aname, sizeof aname, "adv_%04zu.png", i);
    write_png((dir / bname).string(), p.benign.image, 8, {{"config_hash", cfg_hash}});
    write_png((dir / aname).string(), p.adversarial.image, 8, {{"config_hash", cfg_hash}});
    json victims = json::array();
    for (const Box& b : p.victim_boxes) victims.push_back(box_to_json(b));
    json rects = json::array();
    for (const PixelRect& r : p.attack_rects) rects.push_back(rect_to_json(r));
    list.push_back({{"id", p.id},
                    {"benign", bname},
                    {"adversarial", aname},
                    {"victim_boxes", victims},
                    {"attack_rects", rects},
                    {"ground_truth", truth_to_json(p.benign.ground_truth)}});
  }
  manifest["pairs"] = std::move(list);
  write_json_file(dir / "pairs.json", manifest);
}

std::vector<SamplePair> load_pairs(const std::filesystem::path& dir) {
  json manifest = read_json_file(dir / "pairs.json");
  std::vector<SamplePair> pairs;
  for (const auto& e : manifest.at("pairs")) {
    SamplePair p;
    p.id = e.at("id").get<std::string>();
    p.benign.image = read_png((dir / e.at("benign").get<std::string>()).string());
    p.benign.ground_truth = truth_from_json(e.at("ground_truth"));
    p.adversarial.image = read_png((dir / e.at("adversarial").get<std::string>()).string());
    p.adversarial.ground_truth = p.benign.ground_truth;
    p.attack_patch_id = manifest.at("attack_patch_id").get<std::string>();
    for (const auto& v : e.at("victim_boxes")) p.victim_boxes.push_back(box_from_json(v));
    for (const auto& r : e.at("attack_rects")) p.attack_rects.push_back(rect_from_json(r));

    // Pair invariant, image half: differences confined to the attack rectangles.
    if (!p.benign.image.same_shape(p.adversarial.image))
      throw UserError("pair " + p.id + ": image shape mismatch");
    for (int y = 0; y < p.benign.image.h; ++y)
      for (int x = 0; x < p.benign.image.w; ++x) {
        bool inside = false;
        for (const PixelRect& r : p.attack_rects)
          if (x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h) {
            inside = true;
            break;
          }
        if (inside) continue;
        for (int ch = 0; ch < 3; ++ch)
          if (p.benign.image.at(y, x, ch) != p.adversarial.image.at(y, x, ch))
            throw UserError("pair " + p.id + ": adversarial image differs outside attack rects");
      }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void verify_pairs_with_detector(const std::vector<SamplePair>& pairs, const Detector& detector) {
  int person = detector.contract().person_class;
  for (const SamplePair& p : pairs) {
    if (p.victim_boxes.empty()) throw UserError("pair " + p.id + ": no victim boxes");
    auto benign_dets = detector.detect(p.benign.image);
    auto adv_dets = detector.detect(p.adversarial.image);
    for (const Box& v : p.victim_boxes) {
      if (!object_detected(benign_dets, v, person))
        throw UserError("pair " + p.id + ": victim not detected in benign image");
      if (object_detected(adv_dets, v, person))
        throw UserError("pair " + p.id + ": victim still detected in adversarial image");
    }
  }
}

}  // namespace patchprobe
