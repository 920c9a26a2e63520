#include <doctest.h>

#include <cmath>
#include <random>

#include "mvseg/evalkit.hpp"

using namespace mvseg;

namespace {

constexpr double kPi = 3.14159265358979323846;

bool box3d_contains(const Box3D& box, const Eigen::Vector3d& p) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Eigen::Vector3d d = p - box.center;
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  return std::abs(lx) <= 0.5 * box.dims.x() && std::abs(ly) <= 0.5 * box.dims.y() &&
         std::abs(d.z()) <= 0.5 * box.dims.z();
}

// Monte-Carlo IoU: uniform samples over the joint bounding volume, counting
// membership ratios so the volume factor cancels.
double mc_iou_3d(const Box3D& a, const Box3D& b, int samples, std::uint64_t seed) {
  Eigen::Vector3d lo(1e30, 1e30, 1e30), hi = -lo;
  for (const Box3D* box : {&a, &b}) {
    for (const auto& c : box_corners(*box)) {
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(lo.x(), hi.x()), uy(lo.y(), hi.y()),
      uz(lo.z(), hi.z());
  long long inter = 0, uni = 0;
  for (int i = 0; i < samples; ++i) {
    const Eigen::Vector3d p(ux(rng), uy(rng), uz(rng));
    const bool in_a = box3d_contains(a, p), in_b = box3d_contains(b, p);
    inter += in_a && in_b;
    uni += in_a || in_b;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Box3D make_box(double cx, double cy, double cz, double w, double d, double h, double yaw) {
  Box3D box;
  box.center = Eigen::Vector3d(cx, cy, cz);
  box.dims = Eigen::Vector3d(w, d, h);
  box.yaw = yaw;
  return box;
}

PredictionBox pred(const std::string& group, int cls, double conf, PixelBox box) {
  return PredictionBox{group, cls, conf, box};
}

TruthBox truth(const std::string& group, int cls, PixelBox box) {
  return TruthBox{group, cls, box};
}

}  // namespace

TEST_CASE("iou_2d on pixel boxes") {
  const PixelBox a{0, 0, 10, 10};
  CHECK(iou_2d(a, a) == doctest::Approx(1.0));
  CHECK(iou_2d(a, PixelBox{20, 20, 5, 5}) == 0.0);
  // Two 2x2 boxes sharing a 1x2 strip: 2 / (4 + 4 - 2) = 1/3.
  CHECK(iou_2d(PixelBox{0, 0, 2, 2}, PixelBox{1, 0, 2, 2}) == doctest::Approx(1.0 / 3.0));
  CHECK(iou_2d(PixelBox{1, 0, 2, 2}, PixelBox{0, 0, 2, 2}) == doctest::Approx(1.0 / 3.0));
  CHECK(iou_2d(PixelBox{}, PixelBox{}) == 0.0);  // both empty
  CHECK(iou_2d(a, PixelBox{}) == 0.0);
}

TEST_CASE("iou_2d on masks") {
  Mask a(6, 4, 0), b(6, 4, 0);
  CHECK(iou_2d(a, b) == 0.0);  // both empty
  a.at(1, 1) = 1;
  a.at(2, 1) = 1;
  b.at(2, 1) = 1;
  b.at(3, 1) = 1;
  CHECK(iou_2d(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(iou_2d(a, a) == doctest::Approx(1.0));
  const Mask c(5, 4, 0);
  CHECK_THROWS_AS(iou_2d(a, c), std::invalid_argument);
}

TEST_CASE("iou_3d analytic cases") {
  const Box3D unit = make_box(0, 0, 0, 1, 1, 1, 0.0);
  CHECK(iou_3d(unit, unit) == doctest::Approx(1.0).epsilon(1e-9));

  // Unit cubes offset by half along x: intersection 0.5, union 1.5.
  const Box3D shifted = make_box(0.5, 0, 0, 1, 1, 1, 0.0);
  CHECK(iou_3d(unit, shifted) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(iou_3d(shifted, unit) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // Same center, one footprint turned 45 degrees: the octagon intersection
  // works out to IoU exactly 1/sqrt(2).
  const Box3D turned = make_box(0, 0, 0, 1, 1, 1, kPi / 4);
  CHECK(iou_3d(unit, turned) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));

  // Vertically disjoint boxes overlap in BEV but not in volume.
  const Box3D above = make_box(0, 0, 2.0, 1, 1, 1, 0.0);
  CHECK(iou_3d(unit, above) == 0.0);
  CHECK(iou_3d(unit, above, /*bev_only=*/true) == doctest::Approx(1.0).epsilon(1e-9));

  // Far apart entirely.
  CHECK(iou_3d(unit, make_box(10, 10, 0, 1, 1, 1, 0.3)) == 0.0);
}

TEST_CASE("iou_3d matches a Monte-Carlo oracle on random rotated pairs") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> offset(-0.6, 0.6), dim(0.4, 1.8),
      yaw(-kPi, kPi);
  for (int trial = 0; trial < 30; ++trial) {
    const Box3D a = make_box(offset(rng), offset(rng), offset(rng), dim(rng), dim(rng), dim(rng),
                             yaw(rng));
    const Box3D b = make_box(offset(rng), offset(rng), offset(rng), dim(rng), dim(rng), dim(rng),
                             yaw(rng));
    const double exact = iou_3d(a, b);
    const double approx = mc_iou_3d(a, b, 200000, 1000 + trial);
    CHECK(exact >= 0.0);
    CHECK(exact <= 1.0);
    CHECK(std::abs(exact - approx) < 0.01);
    CHECK(iou_3d(b, a) == doctest::Approx(exact).epsilon(1e-12));  // symmetry
  }
}

TEST_CASE("compute_map hand-checked curve: one TP then one FP over two truths") {
  const std::vector<TruthBox> gts = {truth("img0", 1, {0, 0, 10, 10}),
                                     truth("img1", 1, {20, 20, 10, 10})};
  const std::vector<PredictionBox> preds = {pred("img0", 1, 0.9, {0, 0, 10, 10}),
                                            pred("img0", 1, 0.8, {50, 50, 5, 5})};
  const EvalRecord rec = compute_map(preds, gts, 0.5);
  REQUIRE(rec.defined);
  REQUIRE(rec.per_class.size() == 1);
  CHECK(rec.per_class[0].ap == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rec.map == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rec.tp == 1);
  CHECK(rec.fp == 1);
  CHECK(rec.fn == 1);
}

TEST_CASE("compute_map boundary cases") {
  const std::vector<TruthBox> gts = {truth("img0", 1, {0, 0, 10, 10}),
                                     truth("img1", 2, {5, 5, 4, 4})};
  SUBCASE("perfect predictions give mAP 1") {
    const std::vector<PredictionBox> preds = {pred("img0", 1, 1.0, {0, 0, 10, 10}),
                                              pred("img1", 2, 1.0, {5, 5, 4, 4})};
    const EvalRecord rec = compute_map(preds, gts, 0.5);
    CHECK(rec.map == doctest::Approx(1.0));
    CHECK(rec.tp == 2);
    CHECK(rec.fp == 0);
    CHECK(rec.fn == 0);
    CHECK(rec.precision == doctest::Approx(1.0));
    CHECK(rec.recall == doctest::Approx(1.0));
  }
  SUBCASE("no predictions give mAP 0 but stay defined") {
    const EvalRecord rec = compute_map({}, gts, 0.5);
    CHECK(rec.defined);
    CHECK(rec.map == 0.0);
    CHECK(rec.fn == 2);
    CHECK_FALSE(rec.precision_defined);
  }
  SUBCASE("no ground truth is reported as undefined") {
    const EvalRecord rec = compute_map({pred("img0", 1, 0.9, {0, 0, 2, 2})}, {}, 0.5);
    CHECK_FALSE(rec.defined);
    CHECK(rec.per_class.empty());
    CHECK(rec.fp == 1);
  }
}

TEST_CASE("compute_map matches each truth at most once") {
  const std::vector<TruthBox> gts = {truth("img0", 1, {0, 0, 10, 10})};
  const std::vector<PredictionBox> preds = {pred("img0", 1, 0.9, {0, 0, 10, 10}),
                                            pred("img0", 1, 0.8, {0, 0, 10, 10})};
  const EvalRecord rec = compute_map(preds, gts, 0.5);
  CHECK(rec.tp == 1);
  CHECK(rec.fp == 1);
  CHECK(rec.map == doctest::Approx(1.0));  // full recall reached at rank 1
}

TEST_CASE("compute_map averages per-class AP over classes with ground truth") {
  // Class 1: perfect single detection (AP 1). Class 2: detection ranked after
  // an FP of the same class (AP 0.5). Class 9 has predictions but no truth, so
  // it contributes false positives yet no AP term.
  const std::vector<TruthBox> gts = {truth("a", 1, {0, 0, 8, 8}), truth("b", 2, {0, 0, 8, 8})};
  const std::vector<PredictionBox> preds = {
      pred("a", 1, 0.95, {0, 0, 8, 8}),
      pred("b", 2, 0.9, {40, 40, 4, 4}),
      pred("b", 2, 0.7, {0, 0, 8, 8}),
      pred("a", 9, 0.99, {1, 1, 3, 3}),
  };
  const EvalRecord rec = compute_map(preds, gts, 0.5);
  REQUIRE(rec.per_class.size() == 2);
  CHECK(rec.per_class[0].class_id == 1);
  CHECK(rec.per_class[0].ap == doctest::Approx(1.0));
  CHECK(rec.per_class[1].class_id == 2);
  CHECK(rec.per_class[1].ap == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rec.map == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(rec.fp == 2);  // the class-2 miss plus the class-9 stray
}

TEST_CASE("compute_map depends only on the confidence ranking") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> coord(0, 40), size(3, 12), cls(1, 3);
  std::uniform_real_distribution<double> conf(0.05, 0.95);
  std::vector<TruthBox> gts;
  std::vector<PredictionBox> preds;
  for (int i = 0; i < 40; ++i) {
    const std::string group = "img" + std::to_string(i % 6);
    const PixelBox box{coord(rng), coord(rng), size(rng), size(rng)};
    const int c = cls(rng);
    gts.push_back(truth(group, c, box));
    if (i % 3 != 0) {  // jittered hit
      preds.push_back(pred(group, c, conf(rng), PixelBox{box.x + 1, box.y, box.w, box.h}));
    }
    if (i % 4 == 0) {  // stray
      preds.push_back(pred(group, cls(rng), conf(rng), PixelBox{coord(rng), coord(rng), 4, 4}));
    }
  }
  const EvalRecord base = compute_map(preds, gts, 0.5);
  std::vector<PredictionBox> rescaled = preds;
  for (auto& p : rescaled) {
    p.confidence = 0.05 + 0.9 * p.confidence * p.confidence * p.confidence;
  }
  const EvalRecord same = compute_map(rescaled, gts, 0.5);
  REQUIRE(same.per_class.size() == base.per_class.size());
  for (size_t i = 0; i < base.per_class.size(); ++i) {
    CHECK(same.per_class[i].ap == doctest::Approx(base.per_class[i].ap).epsilon(1e-12));
  }
  CHECK(same.map == doctest::Approx(base.map).epsilon(1e-12));

  // AP never exceeds max-recall x max-precision, and equals 1 only with a
  // perfect full-recall ranking.
  for (const auto& c : base.per_class) {
    CHECK(c.ap <= 1.0 + 1e-12);
    CHECK(c.ap < 1.0);  // this corpus has misses and strays by construction
  }
}

TEST_CASE("compute_map_3d scores oriented boxes end to end") {
  std::vector<Truth3D> gts;
  gts.push_back({"ep0", 4, make_box(0, 0, 0.5, 2, 1, 1, 0.3)});
  gts.push_back({"ep1", 4, make_box(5, 5, 0.5, 1, 1, 1, -0.7)});
  std::vector<Prediction3D> preds;
  preds.push_back({"ep0", 4, 0.9, make_box(0.05, 0, 0.5, 2, 1, 1, 0.3)});   // close hit
  preds.push_back({"ep1", 4, 0.8, make_box(9, 9, 0.5, 1, 1, 1, 0.0)});      // miss
  const EvalRecord rec = compute_map_3d(preds, gts, 0.25);
  REQUIRE(rec.per_class.size() == 1);
  CHECK(rec.per_class[0].ap == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rec.tp == 1);
  CHECK(rec.fp == 1);
}

TEST_CASE("pr_sweep counts shrink as the threshold rises") {
  std::vector<TruthBox> gts;
  std::vector<PredictionBox> preds;
  for (int i = 0; i < 20; ++i) {
    const std::string group = "img" + std::to_string(i);
    const PixelBox box{5, 5, 10, 10};
    gts.push_back(truth(group, 1, box));
    if (i < 14) preds.push_back(pred(group, 1, 0.05 * i + 0.1, box));          // hits
    if (i % 5 == 0) preds.push_back(pred(group, 1, 0.04 * i + 0.1, {40, 1, 3, 3}));  // strays
  }
  const std::vector<double> thresholds = {0.0, 0.25, 0.5, 0.75, 1.01};
  const auto rows = pr_sweep(preds, gts, thresholds, 0.5);
  REQUIRE(rows.size() == thresholds.size());
  CHECK(rows[0].tp + rows[0].fp == static_cast<int>(preds.size()));
  for (size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].tp + rows[i].fp <= rows[i - 1].tp + rows[i - 1].fp);
    CHECK(rows[i].recall <= rows[i - 1].recall + 1e-12);
  }
  const SweepRow& last = rows.back();  // above every confidence
  CHECK_FALSE(last.precision_defined);
  CHECK(last.recall == 0.0);
  CHECK(last.tp + last.fp == 0);
}

TEST_CASE("format_eval_table prints per-class rows and the summary") {
  const std::vector<TruthBox> gts = {truth("img0", 3, {0, 0, 10, 10})};
  const std::vector<PredictionBox> preds = {pred("img0", 3, 0.9, {0, 0, 10, 10})};
  const std::string table = format_eval_table(compute_map(preds, gts, 0.5));
  CHECK(table.find("class_3") != std::string::npos);
  CHECK(table.find("mAP") != std::string::npos);
  CHECK(table.find("precision") != std::string::npos);

  const std::string undef = format_eval_table(compute_map(preds, {}, 0.5));
  CHECK(undef.find("undefined") != std::string::npos);
}
