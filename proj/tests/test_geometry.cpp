#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "patchprobe/errors.hpp"
#include "patchprobe/geometry.hpp"
#include "patchprobe/rng.hpp"

using namespace patchprobe;

namespace {

Box random_box(Prng& rng) {
  return Box{rng.uniform(0.0, 20.0), rng.uniform(0.0, 20.0), rng.uniform(0.1, 10.0),
             rng.uniform(0.1, 10.0)};
}

// Independent IoU route: build the intersection rectangle by clamping one
// box's corners into the other, then take areas.
double oracle_iou(const Box& a, const Box& b) {
  double cx1 = std::clamp(b.x, a.x, a.x2());
  double cy1 = std::clamp(b.y, a.y, a.y2());
  double cx2 = std::clamp(b.x2(), a.x, a.x2());
  double cy2 = std::clamp(b.y2(), a.y, a.y2());
  double inter = (cx2 - cx1) * (cy2 - cy1);
  // Clamping alone can build a degenerate sliver when boxes are disjoint on
  // one axis only; zero it explicitly.
  if (std::min(a.x2(), b.x2()) <= std::max(a.x, b.x) ||
      std::min(a.y2(), b.y2()) <= std::max(a.y, b.y))
    inter = 0;
  return inter / (a.area() + b.area() - inter);
}

Detection make_det(Box b, int label, double conf) {
  Detection d;
  d.box = b;
  d.label = label;
  d.confidence = conf;
  d.objectness = conf;
  return d;
}

// Selection-based NMS reference: repeatedly promote the best unsuppressed
// detection, then drop every same-class overlap. Different control flow from
// the production sort-then-scan implementation.
std::vector<Detection> oracle_nms(std::vector<Detection> dets, double thr) {
  auto before = [](const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.box.x != b.box.x) return a.box.x < b.box.x;
    if (a.box.y != b.box.y) return a.box.y < b.box.y;
    if (a.box.w != b.box.w) return a.box.w < b.box.w;
    if (a.box.h != b.box.h) return a.box.h < b.box.h;
    return a.label < b.label;
  };
  std::vector<bool> dead(dets.size(), false);
  std::vector<Detection> kept;
  for (;;) {
    int best = -1;
    for (int i = 0; i < int(dets.size()); ++i) {
      if (dead[i]) continue;
      if (best < 0 || before(dets[i], dets[best])) best = i;
    }
    if (best < 0) break;
    kept.push_back(dets[best]);
    for (int i = 0; i < int(dets.size()); ++i)
      if (!dead[i] && dets[i].label == dets[best].label &&
          iou(dets[i].box, dets[best].box) >= thr)
        dead[i] = true;
  }
  return kept;
}

bool same_dets(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!(a[i].box == b[i].box) || a[i].label != b[i].label ||
        a[i].confidence != b[i].confidence)
      return false;
  return true;
}

}  // namespace

TEST_CASE("iou basics") {
  Box unit{0, 0, 1, 1};
  CHECK(iou(unit, unit) == doctest::Approx(1.0));
  CHECK(iou(unit, Box{5, 5, 1, 1}) == 0.0);
  CHECK(iou(unit, Box{0.5, 0.5, 1, 1}) == doctest::Approx(1.0 / 7.0));
  CHECK_THROWS_AS(iou(unit, Box{0, 0, 0, 1}), UserError);
  CHECK_THROWS_AS(iou(Box{0, 0, -1, 1}, unit), UserError);
}

TEST_CASE("iou matches oracle and is symmetric on random boxes") {
  Prng rng(101);
  for (int i = 0; i < 1000; ++i) {
    Box a = random_box(rng), b = random_box(rng);
    double v = iou(a, b);
    CHECK(v == doctest::Approx(oracle_iou(a, b)).epsilon(1e-12));
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(iou(a, a) == doctest::Approx(1.0));
  }
}

TEST_CASE("union_box basics") {
  Box b{3, 4, 2, 2};
  Box u = union_box({b});
  CHECK(u == b);
  CHECK(union_box({Box{0, 0, 1, 1}, Box{2, 2, 1, 1}}) == Box{0, 0, 3, 3});
  CHECK_THROWS_AS(union_box({}), UserError);
}

TEST_CASE("union_box matches min/max oracle, order independent") {
  Prng rng(202);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Box> boxes;
    for (int i = 0; i < 5; ++i) boxes.push_back(random_box(rng));
    double x1 = 1e18, y1 = 1e18, x2 = -1e18, y2 = -1e18;
    for (const Box& b : boxes) {
      x1 = std::min(x1, b.x);
      y1 = std::min(y1, b.y);
      x2 = std::max(x2, b.x2());
      y2 = std::max(y2, b.y2());
    }
    Box u = union_box(boxes);
    CHECK(u.x == doctest::Approx(x1).epsilon(1e-12));
    CHECK(u.y == doctest::Approx(y1).epsilon(1e-12));
    CHECK(u.x2() == doctest::Approx(x2).epsilon(1e-12));
    CHECK(u.y2() == doctest::Approx(y2).epsilon(1e-12));

    // Fold associativity/commutativity: shuffled pairwise folding agrees.
    std::vector<Box> shuffled = boxes;
    for (int i = int(shuffled.size()) - 1; i > 0; --i)
      std::swap(shuffled[i], shuffled[rng.uniform_int(i + 1)]);
    Box folded = shuffled[0];
    for (size_t i = 1; i < shuffled.size(); ++i) folded = union_box({folded, shuffled[i]});
    CHECK(folded.x == doctest::Approx(u.x).epsilon(1e-12));
    CHECK(folded.w == doctest::Approx(u.w).epsilon(1e-12));
  }
}

TEST_CASE("nms basics") {
  auto d1 = make_det(Box{0, 0, 2, 2}, 0, 0.9);
  auto d2 = make_det(Box{0, 0, 2, 2}, 0, 0.8);
  CHECK(nms({d1}, 0.5).size() == 1);
  auto kept = nms({d2, d1}, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].confidence == 0.9);
  CHECK(nms({}, 0.5).empty());
  CHECK_THROWS_AS(nms({d1}, 0.0), UserError);
  CHECK_THROWS_AS(nms({d1}, 1.5), UserError);

  // Class-aware: same box, different classes, both kept.
  auto other = make_det(Box{0, 0, 2, 2}, 1, 0.8);
  CHECK(nms({d1, other}, 0.5).size() == 2);
}

TEST_CASE("nms matches exhaustive oracle on random sets") {
  Prng rng(303);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Detection> dets;
    int n = 10;
    for (int i = 0; i < n; ++i) {
      Box b{rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0), rng.uniform(1.0, 6.0),
            rng.uniform(1.0, 6.0)};
      dets.push_back(make_det(b, rng.uniform_int(3), std::round(rng.uniform() * 20) / 20.0));
    }
    double thr = rng.uniform(0.2, 0.8);
    auto kept = nms(dets, thr);
    auto expected = oracle_nms(dets, thr);
    CHECK(same_dets(kept, expected));

    // Invariants: subset of input, no same-class pair at/above threshold,
    // descending confidence.
    for (size_t i = 0; i + 1 < kept.size(); ++i) CHECK(kept[i].confidence >= kept[i + 1].confidence);
    for (size_t i = 0; i < kept.size(); ++i)
      for (size_t j = i + 1; j < kept.size(); ++j)
        if (kept[i].label == kept[j].label) CHECK(iou(kept[i].box, kept[j].box) < thr);
  }
}

TEST_CASE("clamp_placement") {
  CHECK(clamp_placement({-10, 5}, 80, 416).x == 0.0);
  CHECK(clamp_placement({-10, 5}, 80, 416).y == 5.0);
  CHECK(clamp_placement({100, 100}, 80, 416).x == 100.0);
  CHECK(clamp_placement({400, 400}, 80, 416).x == 336.0);
  CHECK(clamp_placement({400, 400}, 80, 416).y == 336.0);
  CHECK_THROWS_AS(clamp_placement({0, 0}, 500, 416), UserError);

  Prng rng(404);
  for (int i = 0; i < 200; ++i) {
    Point p{rng.uniform(-200, 600), rng.uniform(-200, 600)};
    Point once = clamp_placement(p, 80, 416);
    Point twice = clamp_placement(once, 80, 416);
    CHECK(once.x == twice.x);
    CHECK(once.y == twice.y);
    CHECK(once.x >= 0);
    CHECK(once.x <= 336);
  }
}

TEST_CASE("raster_rect rounds then clamps") {
  CHECK(raster_rect({10.4, 10.6}, 8, 96) == PixelRect{10, 11, 8, 8});
  CHECK(raster_rect({-3, 95}, 8, 96) == PixelRect{0, 88, 8, 8});
  CHECK(raster_rect({0, 0}, 96, 96) == PixelRect{0, 0, 96, 96});
}
