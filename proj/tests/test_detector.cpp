#include <doctest.h>

#include <filesystem>

#include "patchprobe/errors.hpp"
#include "patchprobe/mock_detector.hpp"
#include "patchprobe/toy_detector.hpp"
#include "support/test_support.hpp"

using namespace patchprobe;
using namespace patchprobe::testing;

namespace {

RawBox make_raw(Box b, double obj, int cls, int class_count) {
  RawBox r;
  r.box = b;
  r.objectness = obj;
  r.class_scores.assign(class_count, 0.05);
  r.class_scores[cls] = 0.9;
  return r;
}

}  // namespace

TEST_CASE("contract validation") {
  DetectorContract c = small_contract();
  CHECK_NOTHROW(c.validate());
  DetectorContract bad = c;
  bad.person_class = 99;
  CHECK_THROWS_AS(bad.validate(), UserError);
  bad = c;
  bad.objectness_threshold = 1.5;
  CHECK_THROWS_AS(bad.validate(), UserError);
}

TEST_CASE("mock detector echoes scripts and shares the detect pipeline") {
  DetectorContract c = small_contract(48, 3);
  std::vector<RawBox> script = {make_raw(Box{4, 4, 10, 12}, 0.9, 0, 3),
                                make_raw(Box{24, 20, 8, 8}, 0.7, 1, 3)};
  MockDetector det(c, script);
  Image img(48, 48, 3, 0.3);

  auto raw = det.raw_boxes(img);
  REQUIRE(raw.size() == 2);
  CHECK(raw[0].box == script[0].box);
  CHECK(raw[1].objectness == 0.7);

  auto dets = det.detect(img);
  REQUIRE(dets.size() == 2);
  CHECK(dets[0].label == 0);  // 0.9*0.9 outranks 0.7*0.9
  CHECK(dets[0].confidence == doctest::Approx(0.81));

  // Below-threshold boxes vanish.
  MockDetector weak(c, {make_raw(Box{4, 4, 10, 12}, 0.4, 0, 3)});
  CHECK(weak.detect(img).empty());

  // detect == NMS(thresholded raw_boxes) recomposed independently.
  auto recomposed = detections_from_raw(det.raw_boxes(img), c);
  REQUIRE(dets.size() == recomposed.size());
  for (size_t i = 0; i < dets.size(); ++i) {
    CHECK(dets[i].box == recomposed[i].box);
    CHECK(dets[i].label == recomposed[i].label);
  }

  // Per-image scripting by fingerprint.
  Image other(48, 48, 3, 0.6);
  det.script(other, {make_raw(Box{1, 1, 5, 5}, 0.95, 2, 3)});
  CHECK(det.detect(other).size() == 1);
  CHECK(det.detect(other)[0].label == 2);
  CHECK(det.detect(img).size() == 2);

  CHECK_THROWS_AS(det.raw_boxes(Image(32, 32, 3)), UserError);
  CHECK_THROWS_AS(
      det.loss_and_gradient(img, {LossTarget{Box{1, 1, 4, 4}, 0, true}}, TermSet{},
                            PixelRect{0, 0, 8, 8}),
      UserError);
  CHECK_FALSE(det.differentiable());
}

TEST_CASE("toy detector raw output is a full finite grid") {
  auto c = small_contract();
  ToyDetector det(c, small_net_config(), 123);
  Image zeros(48, 48, 3, 0.0);
  auto raw = det.raw_boxes(zeros);
  CHECK(raw.size() == 36);  // 6x6 grid
  for (const RawBox& r : raw) {
    CHECK(std::isfinite(r.objectness));
    CHECK(r.objectness >= 0.0);
    CHECK(r.objectness <= 1.0);
    CHECK(r.class_scores.size() == 3);
    double sum = 0;
    for (double s : r.class_scores) {
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
      sum += s;
    }
    CHECK(sum == doctest::Approx(1.0));
    CHECK(r.box.valid());
  }
  CHECK(det.differentiable());
}

TEST_CASE("engineered perfect detection drives losses to zero") {
  auto c = small_contract();
  auto ncfg = small_net_config();
  ToyDetector det(c, ncfg, 1);
  ToyNet& net = det.mutable_net();
  std::fill(net.params().begin(), net.params().end(), 0.0);
  int head = net.layer_count() - 1;
  size_t b = net.layer_bias_offset(head);
  net.params()[b + 4] = 20.0;   // objectness logit
  net.params()[b + 5] = 20.0;   // class 0 logit
  net.params()[b + 6] = -20.0;
  net.params()[b + 7] = -20.0;

  // With zero conv weights every cell emits identical outputs; pick the cell
  // at grid position (2,2): its decoded box is anchor-sized, centered at
  // (20,20), fully inside the image. A target region equal to that box makes
  // it the unique IoU-1 match, so every term collapses to ~0.
  Box region{2.5 * 8 - ncfg.anchor_w / 2.0, 2.5 * 8 - ncfg.anchor_h / 2.0, ncfg.anchor_w,
             ncfg.anchor_h};

  Image img(48, 48, 3, 0.5);
  auto res = det.loss_and_gradient(img, {LossTarget{region, 0, true}}, TermSet{},
                                   PixelRect{0, 0, 48, 48});
  CHECK(res.terms.obj < 1e-6);
  CHECK(res.terms.cls < 1e-6);
  CHECK(res.terms.box < 1e-9);

  // Closed form: objectness logit 0 gives -log(0.5).
  net.params()[b + 4] = 0.0;
  auto res2 = det.loss_and_gradient(img, {LossTarget{region, 0, true}}, TermSet{},
                                    PixelRect{0, 0, 48, 48});
  CHECK(res2.terms.obj == doctest::Approx(std::log(2.0)));
}

TEST_CASE("loss_and_gradient rejects bad queries") {
  auto det = ToyDetector(small_contract(), small_net_config(), 5);
  Image img(48, 48, 3, 0.2);
  CHECK_THROWS_AS(det.loss_and_gradient(img, {}, TermSet{}, PixelRect{0, 0, 8, 8}), UserError);
  CHECK_THROWS_AS(det.loss_and_gradient(img, {LossTarget{Box{40, 40, 20, 20}, 0, true}},
                                         TermSet{}, PixelRect{0, 0, 8, 8}),
                  UserError);
  CHECK_THROWS_AS(det.loss_and_gradient(img, {LossTarget{Box{1, 1, 4, 4}, 7, true}}, TermSet{},
                                         PixelRect{0, 0, 8, 8}),
                  UserError);
  CHECK_THROWS_AS(det.max_objectness(img, {}, 0.3, PixelRect{0, 0, 8, 8}), UserError);
}

TEST_CASE("analytic pixel gradients match central differences") {
  Prng rng(777);
  auto det = ToyDetector(small_contract(), small_net_config(), rng.next_u64());
  Image img = random_image(48, rng);

  std::vector<LossTarget> targets = {
      LossTarget{Box{6, 8, 14, 18}, 1, true},
      LossTarget{Box{24, 20, 12, 14}, 0, false},
  };
  TermSet terms;  // obj+cls+box

  PixelRect full{0, 0, 48, 48};
  auto res = det.loss_and_gradient(img, targets, terms, full);
  auto loss_fn = [&](const Image& x) {
    return terms.total(det.loss_and_gradient(x, targets, terms, full).terms);
  };
  auto stats = gradcheck_pixels(img, res.grad, loss_fn, 12, rng);
  INFO("worst rel err ", stats.worst_rel_err, " skipped ", stats.skipped_kinks);
  CHECK(stats.checked == 12);
  CHECK(stats.worst_rel_err <= 1e-3);
}

TEST_CASE("objectness probe gradient matches central differences") {
  Prng rng(778);
  auto det = ToyDetector(small_contract(), small_net_config(), rng.next_u64());
  Image img = random_image(48, rng);
  std::vector<Box> regions = {Box{10, 10, 16, 20}};

  PixelRect full{0, 0, 48, 48};
  auto probe = det.max_objectness(img, regions, 0.1, full);
  if (!probe.found) return;  // random net may emit no overlapping box; fine
  auto loss_fn = [&](const Image& x) { return det.max_objectness(x, regions, 0.1, full).value; };
  auto stats = gradcheck_pixels(img, probe.grad, loss_fn, 8, rng);
  INFO("worst rel err ", stats.worst_rel_err);
  CHECK(stats.checked == 8);
  CHECK(stats.worst_rel_err <= 1e-3);
}

TEST_CASE("roi slicing returns the sub-rectangle of the full gradient") {
  Prng rng(779);
  auto det = ToyDetector(small_contract(), small_net_config(), rng.next_u64());
  Image img = random_image(48, rng);
  std::vector<LossTarget> targets = {LossTarget{Box{6, 8, 14, 18}, 1, true}};
  PixelRect full{0, 0, 48, 48}, roi{8, 12, 10, 10};
  auto gfull = det.loss_and_gradient(img, targets, TermSet{}, full);
  auto groi = det.loss_and_gradient(img, targets, TermSet{}, roi);
  CHECK(groi.grad.h == 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x)
      for (int ch = 0; ch < 3; ++ch)
        CHECK(groi.grad.at(y, x, ch) == gfull.grad.at(roi.y + y, roi.x + x, ch));
}

TEST_CASE("toy detector save/load round trip") {
  Prng rng(780);
  auto dir = std::filesystem::temp_directory_path() / "patchprobe_det_rt";
  auto det = ToyDetector(small_contract(), small_net_config(), rng.next_u64());
  save_toy_detector(dir, det, DetectorSaveInfo{42, "corpus", "cfg"});
  auto back = load_toy_detector(dir);
  CHECK(back->weights_fingerprint() == det.weights_fingerprint());
  CHECK(back->contract().class_count == 3);
  CHECK(back->contract().class_names == det.contract().class_names);

  Image img = random_image(48, rng);
  auto a = det.raw_boxes(img);
  auto b = back->raw_boxes(img);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].objectness == b[i].objectness);
    CHECK(a[i].box == b[i].box);
  }
}
