#include "patchprobe/toy_detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "patchprobe/artifact_io.hpp"
#include "patchprobe/errors.hpp"
#include "patchprobe/optim.hpp"

namespace patchprobe {

namespace {

constexpr double kProbEps = 1e-12;
constexpr double kLogitClamp = 8.0;  // exp range guard for box sizes

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// -log(sigmoid(z)), exact and stable for any z; the gradient sigmoid(z)-1
// stays consistent with the value everywhere.
double softplus_neg(double z) { return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

struct CellDecode {
  double sx, sy;   // sigmoid(tx), sigmoid(ty)
  double tw, th;   // raw size logits (clamped)
  bool tw_sat, th_sat;
  double obj;
  double obj_logit;
  std::vector<double> cls;  // softmax
  double cls_lse = 0;       // logsumexp of class logits
  Box box;
};

CellDecode decode_cell(const Image& head, int gy, int gx, const ToyNetConfig& cfg) {
  CellDecode d;
  const int stride = cfg.stride();
  d.sx = sigmoid(head.at(gy, gx, 0));
  d.sy = sigmoid(head.at(gy, gx, 1));
  double tw_raw = head.at(gy, gx, 2), th_raw = head.at(gy, gx, 3);
  d.tw = std::clamp(tw_raw, -kLogitClamp, kLogitClamp);
  d.th = std::clamp(th_raw, -kLogitClamp, kLogitClamp);
  d.tw_sat = tw_raw != d.tw;
  d.th_sat = th_raw != d.th;
  d.obj_logit = head.at(gy, gx, 4);
  d.obj = sigmoid(d.obj_logit);
  double w = cfg.anchor_w * std::exp(d.tw);
  double h = cfg.anchor_h * std::exp(d.th);
  double cx = (gx + d.sx) * stride;
  double cy = (gy + d.sy) * stride;
  d.box = Box{cx - w / 2, cy - h / 2, w, h};

  d.cls.resize(cfg.class_count);
  double maxz = head.at(gy, gx, 5);
  for (int k = 1; k < cfg.class_count; ++k) maxz = std::max(maxz, head.at(gy, gx, 5 + k));
  double sum = 0;
  for (int k = 0; k < cfg.class_count; ++k) {
    d.cls[k] = std::exp(head.at(gy, gx, 5 + k) - maxz);
    sum += d.cls[k];
  }
  for (double& p : d.cls) p /= sum;
  d.cls_lse = maxz + std::log(sum);
  return d;
}

// d(IoU(pred, fixed))/d(pred center/size); flat (zero) when disjoint.
struct IouGrad {
  double dcx = 0, dcy = 0, dw = 0, dh = 0;
  double value = 0;
};

IouGrad iou_gradient(const Box& pred, const Box& fixed) {
  IouGrad g;
  g.value = iou(pred, fixed);
  double ax1 = pred.x, ay1 = pred.y, ax2 = pred.x2(), ay2 = pred.y2();
  double ix = std::min(ax2, fixed.x2()) - std::max(ax1, fixed.x);
  double iy = std::min(ay2, fixed.y2()) - std::max(ay1, fixed.y);
  if (ix <= 0 || iy <= 0) return g;  // subgradient 0 on the flat region
  double inter = ix * iy;
  double uni = pred.area() + fixed.area() - inter;

  // Intersection edge indicators.
  double dix_dax1 = ax1 > fixed.x ? -1.0 : 0.0;
  double dix_dax2 = ax2 < fixed.x2() ? 1.0 : 0.0;
  double diy_day1 = ay1 > fixed.y ? -1.0 : 0.0;
  double diy_day2 = ay2 < fixed.y2() ? 1.0 : 0.0;

  auto d_for = [&](double dI, double dA) {
    // IoU = I/U, U = A + B - I  =>  d = (dI*U - I*(dA - dI)) / U^2
    return (dI * uni - inter * (dA - dI)) / (uni * uni);
  };

  double aw = pred.w, ah = pred.h;
  // Corner derivatives of I and A.
  double dI_ax1 = dix_dax1 * iy, dI_ax2 = dix_dax2 * iy;
  double dI_ay1 = diy_day1 * ix, dI_ay2 = diy_day2 * ix;
  double dA_ax1 = -ah, dA_ax2 = ah, dA_ay1 = -aw, dA_ay2 = aw;

  double d_ax1 = d_for(dI_ax1, dA_ax1), d_ax2 = d_for(dI_ax2, dA_ax2);
  double d_ay1 = d_for(dI_ay1, dA_ay1), d_ay2 = d_for(dI_ay2, dA_ay2);

  // Chain to center/size: ax1 = cx - w/2, ax2 = cx + w/2.
  g.dcx = d_ax1 + d_ax2;
  g.dcy = d_ay1 + d_ay2;
  g.dw = 0.5 * (d_ax2 - d_ax1);
  g.dh = 0.5 * (d_ay2 - d_ay1);
  return g;
}

Image slice_roi(const Image& full, const PixelRect& roi) {
  Image out(roi.h, roi.w, full.c);
  for (int y = 0; y < roi.h; ++y)
    for (int x = 0; x < roi.w; ++x)
      for (int ch = 0; ch < full.c; ++ch) out.at(y, x, ch) = full.at(roi.y + y, roi.x + x, ch);
  return out;
}

void check_roi(const PixelRect& roi, int input_size) {
  if (roi.w <= 0 || roi.h <= 0 || roi.x < 0 || roi.y < 0 || roi.x + roi.w > input_size ||
      roi.y + roi.h > input_size)
    throw UserError("gradient roi outside image");
}

}  // namespace

ToyDetector::ToyDetector(DetectorContract contract, ToyNetConfig net_cfg, uint64_t init_seed)
    : Detector(std::move(contract)), net_(std::move(net_cfg)) {
  if (net_.config().input_size != contract_.input_size)
    throw UserError("toy detector: contract and net input sizes disagree");
  if (net_.config().class_count != contract_.class_count)
    throw UserError("toy detector: contract and net class counts disagree");
  Prng rng(init_seed);
  net_.init_weights(rng);
}

ToyDetector::ToyDetector(DetectorContract contract, ToyNet net)
    : Detector(std::move(contract)), net_(std::move(net)) {
  if (net_.config().input_size != contract_.input_size ||
      net_.config().class_count != contract_.class_count)
    throw UserError("toy detector: contract and net disagree");
}

std::vector<RawBox> ToyDetector::raw_boxes(const Image& image) const {
  check_image(image);
  Image head = net_.forward(image);
  const ToyNetConfig& cfg = net_.config();
  const int g = cfg.grid();
  std::vector<RawBox> out;
  out.reserve(size_t(g) * g);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      CellDecode d = decode_cell(head, gy, gx, cfg);
      RawBox r;
      r.box = d.box;
      r.objectness = d.obj;
      r.class_scores = std::move(d.cls);
      out.push_back(std::move(r));
    }
  return out;
}

LossGradient ToyDetector::loss_and_gradient(const Image& image,
                                            const std::vector<LossTarget>& targets,
                                            const TermSet& terms, const PixelRect& roi) const {
  check_image(image);
  if (targets.empty()) throw UserError("loss_and_gradient: empty targets");
  check_roi(roi, contract_.input_size);
  for (const LossTarget& t : targets) {
    if (!t.region.valid() || t.region.x < 0 || t.region.y < 0 ||
        t.region.x2() > contract_.input_size || t.region.y2() > contract_.input_size)
      throw UserError("loss_and_gradient: target region outside image");
    if (t.label < 0 || t.label >= contract_.class_count)
      throw UserError("loss_and_gradient: bad target label");
  }

  const ToyNetConfig& cfg = net_.config();
  const int g = cfg.grid();
  ToyNet::Trace trace;
  Image head = net_.forward(image, &trace);

  std::vector<CellDecode> cells;
  cells.reserve(size_t(g) * g);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) cells.push_back(decode_cell(head, gy, gx, cfg));

  Image dhead(g, g, cfg.head_channels());
  LossGradient res;
  res.roi = roi;

  for (const LossTarget& t : targets) {
    // Match: raw box of maximal IoU with the target region, ties broken by
    // higher objectness, then by lower index.
    int best = -1;
    double best_iou = -1, best_obj = -1;
    for (int i = 0; i < int(cells.size()); ++i) {
      double v = iou(cells[i].box, t.region);
      if (v > best_iou || (v == best_iou && cells[i].obj > best_obj)) {
        best = i;
        best_iou = v;
        best_obj = cells[i].obj;
      }
    }
    const CellDecode& d = cells[best];
    const int gy = best / g, gx = best % g;
    const int stride = cfg.stride();

    if (terms.obj) {
      if (t.want_present) {
        res.terms.obj += softplus_neg(d.obj_logit);
        dhead.at(gy, gx, 4) += d.obj - 1.0;
      } else {
        res.terms.obj += softplus_neg(-d.obj_logit);
        dhead.at(gy, gx, 4) += d.obj;
      }
    }
    if (terms.cls) {
      if (t.want_present) {
        // -log softmax via logsumexp, exact at any logit scale.
        res.terms.cls += d.cls_lse - head.at(gy, gx, 5 + t.label);
        for (int k = 0; k < cfg.class_count; ++k)
          dhead.at(gy, gx, 5 + k) += d.cls[k] - (k == t.label ? 1.0 : 0.0);
      } else {
        double pl = std::clamp(d.cls[t.label], kProbEps, 1.0 - kProbEps);
        res.terms.cls += -std::log(1.0 - pl);
        for (int k = 0; k < cfg.class_count; ++k)
          dhead.at(gy, gx, 5 + k) +=
              d.cls[t.label] * ((k == t.label ? 1.0 : 0.0) - d.cls[k]) / (1.0 - pl);
      }
    }
    if (terms.box) {
      IouGrad ig = iou_gradient(d.box, t.region);
      res.terms.box += 1.0 - ig.value;
      // d(1-IoU)/d logits through center = (cell + sigmoid)*stride and
      // size = anchor*exp(t).
      dhead.at(gy, gx, 0) += -ig.dcx * d.sx * (1 - d.sx) * stride;
      dhead.at(gy, gx, 1) += -ig.dcy * d.sy * (1 - d.sy) * stride;
      if (!d.tw_sat) dhead.at(gy, gx, 2) += -ig.dw * d.box.w;
      if (!d.th_sat) dhead.at(gy, gx, 3) += -ig.dh * d.box.h;
    }
  }

  Image dinput = net_.backward(trace, dhead);
  res.grad = slice_roi(dinput, roi);
  return res;
}

ObjProbe ToyDetector::max_objectness(const Image& image, const std::vector<Box>& regions,
                                     double iou_floor, const PixelRect& roi) const {
  check_image(image);
  if (regions.empty()) throw UserError("max_objectness: no regions");
  check_roi(roi, contract_.input_size);

  const ToyNetConfig& cfg = net_.config();
  const int g = cfg.grid();
  ToyNet::Trace trace;
  Image head = net_.forward(image, &trace);

  ObjProbe probe;
  probe.roi = roi;
  double best_obj = -1;
  int best = -1;
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      CellDecode d = decode_cell(head, gy, gx, cfg);
      bool qualifies = false;
      for (const Box& r : regions)
        if (iou(d.box, r) > iou_floor) {
          qualifies = true;
          break;
        }
      if (qualifies && d.obj > best_obj) {
        best_obj = d.obj;
        best = gy * g + gx;
      }
    }

  if (best < 0) {
    probe.grad = Image(roi.h, roi.w, 3);
    return probe;
  }
  probe.found = true;
  probe.raw_index = best;
  probe.value = best_obj;

  Image dhead(g, g, cfg.head_channels());
  // d(sigmoid)/d(logit) through the argmax box only.
  dhead.at(best / g, best % g, 4) = best_obj * (1.0 - best_obj);
  Image dinput = net_.backward(trace, dhead);
  probe.grad = slice_roi(dinput, roi);
  return probe;
}

uint64_t ToyDetector::weights_fingerprint() const {
  return fnv1a64_bytes(net_.params().data(), net_.params().size() * sizeof(double));
}

double detection_rate(const Detector& det, const std::vector<Scene>& scenes,
                      int* total_objects) {
  int total = 0, hit = 0;
  for (const Scene& s : scenes) {
    auto dets = det.detect(s.image);
    for (const auto& gt : s.ground_truth) {
      ++total;
      if (object_detected(dets, gt.box, gt.class_id)) ++hit;
    }
  }
  if (total_objects) *total_objects = total;
  return total == 0 ? 0.0 : double(hit) / total;
}

namespace {

struct SceneGrad {
  double loss = 0;
  std::vector<double> grads;
};

SceneGrad scene_loss_and_param_grads(const ToyNet& net, const Scene& scene,
                                     const DetectorTrainConfig& cfg) {
  const ToyNetConfig& ncfg = net.config();
  const int g = ncfg.grid();
  const int stride = ncfg.stride();

  ToyNet::Trace trace;
  Image head = net.forward(scene.image, &trace);

  std::vector<CellDecode> cells;
  cells.reserve(size_t(g) * g);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) cells.push_back(decode_cell(head, gy, gx, ncfg));

  // One responsible cell per ground-truth object (first object wins a cell).
  std::vector<int> responsible(size_t(g) * g, -1);
  for (int t = 0; t < int(scene.ground_truth.size()); ++t) {
    const auto& gt = scene.ground_truth[t];
    int gx = std::clamp(int(gt.box.cx() / stride), 0, g - 1);
    int gy = std::clamp(int(gt.box.cy() / stride), 0, g - 1);
    if (responsible[size_t(gy) * g + gx] < 0) responsible[size_t(gy) * g + gx] = t;
  }

  Image dhead(g, g, ncfg.head_channels());
  double loss = 0;

  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      const int ci = gy * g + gx;
      const CellDecode& d = cells[ci];
      int t = responsible[ci];
      if (t >= 0) {
        const auto& gt = scene.ground_truth[t];
        loss += cfg.lambda_obj * softplus_neg(d.obj_logit);
        dhead.at(gy, gx, 4) += cfg.lambda_obj * (d.obj - 1.0);

        loss += cfg.lambda_cls * (d.cls_lse - head.at(gy, gx, 5 + gt.class_id));
        for (int k = 0; k < ncfg.class_count; ++k)
          dhead.at(gy, gx, 5 + k) +=
              cfg.lambda_cls * (d.cls[k] - (k == gt.class_id ? 1.0 : 0.0));

        double gxo = gt.box.cx() / stride - gx;
        double gyo = gt.box.cy() / stride - gy;
        double twt = std::log(gt.box.w / ncfg.anchor_w);
        double tht = std::log(gt.box.h / ncfg.anchor_h);
        double ex = d.sx - gxo, ey = d.sy - gyo, ew = d.tw - twt, eh = d.th - tht;
        loss += cfg.lambda_box * (ex * ex + ey * ey + ew * ew + eh * eh);
        dhead.at(gy, gx, 0) += cfg.lambda_box * 2 * ex * d.sx * (1 - d.sx);
        dhead.at(gy, gx, 1) += cfg.lambda_box * 2 * ey * d.sy * (1 - d.sy);
        if (!d.tw_sat) dhead.at(gy, gx, 2) += cfg.lambda_box * 2 * ew;
        if (!d.th_sat) dhead.at(gy, gx, 3) += cfg.lambda_box * 2 * eh;
      } else {
        // Background cell; left alone when its box already overlaps a truth.
        double best = 0;
        for (const auto& gt : scene.ground_truth) best = std::max(best, iou(d.box, gt.box));
        if (best > cfg.ignore_iou) continue;
        loss += cfg.lambda_noobj * softplus_neg(-d.obj_logit);
        dhead.at(gy, gx, 4) += cfg.lambda_noobj * d.obj;
      }
    }

  SceneGrad out;
  out.loss = loss;
  out.grads.assign(net.param_count(), 0.0);
  net.backward(trace, dhead, &out.grads);
  return out;
}

}  // namespace

std::unique_ptr<ToyDetector> train_toy_detector(const std::vector<Scene>& corpus,
                                                const std::vector<Scene>& holdout,
                                                const DetectorContract& contract,
                                                const ToyNetConfig& net_cfg,
                                                const DetectorTrainConfig& cfg,
                                                DetectorTrainReport* report) {
  if (corpus.empty()) throw UserError("train_toy_detector: empty corpus");
  for (const Scene& s : corpus)
    for (const auto& gt : s.ground_truth)
      if (gt.class_id >= contract.class_count)
        throw UserError("train_toy_detector: corpus class outside contract");

  Prng rng(cfg.seed);
  auto det = std::make_unique<ToyDetector>(contract, net_cfg, rng.split("init").next_u64());
  ToyNet& net = det->mutable_net();

  Adam adam;
  adam.lr = cfg.lr;
  adam.reset(net.param_count());

  Prng shuffle_rng = rng.split("shuffle");
  std::vector<int> order(corpus.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  const int batch = std::max(1, cfg.batch);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates shuffle per epoch.
    for (int i = int(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);

    double epoch_loss = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += batch, ++batches) {
      size_t end = std::min(order.size(), start + batch);
      std::vector<SceneGrad> partial(end - start);
      parallel_for(int(end - start), cfg.jobs, [&](int i) {
        partial[i] = scene_loss_and_param_grads(net, corpus[order[start + i]], cfg);
      });
      std::vector<double> grad(net.param_count(), 0.0);
      double batch_loss = 0;
      for (const SceneGrad& p : partial) {  // fixed order, deterministic
        batch_loss += p.loss;
        for (size_t j = 0; j < grad.size(); ++j) grad[j] += p.grads[j];
      }
      double inv = 1.0 / double(end - start);
      batch_loss *= inv;
      for (double& v : grad) v *= inv;
      if (!std::isfinite(batch_loss))
        throw InternalError("train_toy_detector: diverged (non-finite loss) at epoch " +
                            std::to_string(epoch) + " step " + std::to_string(step));
      adam.step(net.params(), grad);
      epoch_loss += batch_loss;
      ++step;
    }
    if (report) report->epoch_loss.push_back(epoch_loss / std::max(1, batches));
  }

  if (report) {
    report->holdout_detection_rate =
        holdout.empty() ? 0.0 : detection_rate(*det, holdout, &report->holdout_objects);
  }
  return det;
}

void save_toy_detector(const std::filesystem::path& dir, const ToyDetector& det,
                       const DetectorSaveInfo& info) {
  std::filesystem::create_directories(dir);
  const ToyNetConfig& ncfg = det.net().config();
  const DetectorContract& c = det.contract();

  std::ofstream f(dir / "weights.bin", std::ios::binary);
  if (!f) throw UserError("cannot write " + (dir / "weights.bin").string());
  const char magic[8] = {'P', 'P', 'T', 'D', '0', '0', '0', '1'};
  f.write(magic, sizeof magic);
  auto w32 = [&f](int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto w64f = [&f](double v) { f.write(reinterpret_cast<const char*>(&v), 8); };
  w32(ncfg.input_size);
  w32(ncfg.class_count);
  w32(int32_t(ncfg.widths.size()));
  for (int w : ncfg.widths) w32(w);
  w64f(ncfg.anchor_w);
  w64f(ncfg.anchor_h);
  w32(c.person_class);
  w64f(c.objectness_threshold);
  w64f(c.nms_iou);
  uint64_t n = det.net().param_count();
  f.write(reinterpret_cast<const char*>(&n), 8);
  f.write(reinterpret_cast<const char*>(det.net().params().data()), std::streamsize(n * 8));
  if (!f) throw InternalError("short write of detector weights");
  f.close();

  json m;
  m["class_names"] = c.class_names;
  m["input_size"] = c.input_size;
  m["class_count"] = c.class_count;
  m["person_class"] = c.person_class;
  m["objectness_threshold"] = c.objectness_threshold;
  m["nms_iou"] = c.nms_iou;
  m["anchors"] = {ncfg.anchor_w, ncfg.anchor_h};
  m["widths"] = ncfg.widths;
  m["training_seed"] = info.training_seed;
  m["corpus_hash"] = info.corpus_hash;
  m["config_hash"] = info.config_hash;
  m["weights_sha256"] = sha256_file(dir / "weights.bin");
  write_json_file(dir / "manifest.json", m);
}

std::unique_ptr<ToyDetector> load_toy_detector(const std::filesystem::path& dir) {
  std::ifstream f(dir / "weights.bin", std::ios::binary);
  if (!f) throw UserError("cannot read " + (dir / "weights.bin").string());
  char magic[8];
  f.read(magic, sizeof magic);
  if (std::memcmp(magic, "PPTD0001", 8) != 0)
    throw UserError("bad detector weights magic in " + dir.string());
  auto r32 = [&f] {
    int32_t v;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto r64f = [&f] {
    double v;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  ToyNetConfig ncfg;
  ncfg.input_size = r32();
  ncfg.class_count = r32();
  int nw = r32();
  ncfg.widths.assign(size_t(nw), 0);
  for (int i = 0; i < nw; ++i) ncfg.widths[i] = r32();
  ncfg.anchor_w = r64f();
  ncfg.anchor_h = r64f();

  DetectorContract c;
  c.input_size = ncfg.input_size;
  c.class_count = ncfg.class_count;
  c.person_class = r32();
  c.objectness_threshold = r64f();
  c.nms_iou = r64f();

  uint64_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 8);
  ToyNet net(ncfg);
  if (net.param_count() != n) throw UserError("detector weights size mismatch in " + dir.string());
  f.read(reinterpret_cast<char*>(net.params().data()), std::streamsize(n * 8));
  if (!f) throw UserError("truncated detector weights in " + dir.string());

  if (std::filesystem::exists(dir / "manifest.json")) {
    json m = read_json_file(dir / "manifest.json");
    if (m.contains("class_names")) c.class_names = m["class_names"].get<std::vector<std::string>>();
  }
  return std::make_unique<ToyDetector>(std::move(c), std::move(net));
}

}  // namespace patchprobe
