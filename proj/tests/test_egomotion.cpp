#include <doctest.h>

#include <cmath>
#include <functional>

#include "fixtures.hpp"
#include "mvseg/egomotion.hpp"

using namespace mvseg;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Renders a depth image from an analytic depth function of the pixel.
PosedFrame analytic_frame(int view_index, const Intrinsics& intr, const Pose& pose,
                          const std::function<double(double, double)>& depth_of) {
  PosedFrame f;
  f.view_index = view_index;
  f.intr = intr;
  f.pose = pose;
  f.rgb = ColorImage(intr.width, intr.height, Rgb8{128, 128, 128});
  f.depth = DepthImage(intr.width, intr.height, 0.0f);
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      const double xhat = (u - intr.cx) / intr.fx;
      const double yhat = (v - intr.cy) / intr.fy;
      f.depth.at(u, v) = static_cast<float>(depth_of(xhat, yhat));
    }
  }
  return f;
}

// Two fronto-parallel planes split down the image: exact float depths, strong
// depth structure for the rigid fit.
double split_depth(double xhat, double /*yhat*/) { return xhat < 0.0 ? 3.0 : 1.5; }

Episode static_split_episode(int n_frames) {
  Episode ep;
  ep.episode_id = "static_split";
  ep.target_class = 1;
  ep.reference_view = 0;
  const Intrinsics intr = fixtures::small_camera();
  for (int i = 0; i < n_frames; ++i) {
    ep.frames.push_back(analytic_frame(i, intr, Pose{}, split_depth));
  }
  return ep;
}

Pose pan_pose(double angle_rad, const Eigen::Vector3d& translation = Eigen::Vector3d::Zero()) {
  Pose p;
  p.rotation = Eigen::AngleAxisd(angle_rad, Eigen::Vector3d::UnitY()).toRotationMatrix();
  p.translation = translation;
  return p;
}

double rotation_angle(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const double c = ((a * b.transpose()).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace

TEST_CASE("sample_actuation_noise draws the component mean when covariance is zero") {
  ActionNoiseModel model;
  const double half_deg = 0.5 * kPi / 180.0;
  model.actions["move_forward"] = {{1.0, {0.01, 0.0, half_deg}, {0.0, 0.0, 0.0}}};
  model.validate();
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i) {
    const Eigen::Vector3d s = sample_actuation_noise(model, "move_forward", rng);
    CHECK(s.x() == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(s.y() == 0.0);
    CHECK(s.z() == doctest::Approx(half_deg).epsilon(1e-15));
  }
}

TEST_CASE("sample_actuation_noise mixes components by weight") {
  ActionNoiseModel model;
  model.actions["move_forward"] = {{0.5, {0.05, 0.0, 0.0}, {0.0, 0.0, 0.0}},
                                   {0.5, {-0.05, 0.0, 0.0}, {0.0, 0.0, 0.0}}};
  model.validate();
  std::mt19937_64 rng(11);
  double mean = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const Eigen::Vector3d s = sample_actuation_noise(model, "move_forward", rng);
    CHECK(std::abs(std::abs(s.x()) - 0.05) < 1e-12);  // always one of the two modes
    mean += s.x();
  }
  CHECK(std::abs(mean / draws) < 0.002);
}

TEST_CASE("sample_actuation_noise is deterministic given the seed") {
  const ActionNoiseModel model = ActionNoiseModel::default_model();
  const Eigen::Vector3d a = sample_actuation_noise(model, "turn_left", std::uint64_t{99});
  const Eigen::Vector3d b = sample_actuation_noise(model, "turn_left", std::uint64_t{99});
  CHECK(a == b);
  CHECK_THROWS_AS(sample_actuation_noise(model, "strafe_left", std::uint64_t{1}),
                  std::invalid_argument);
}

TEST_CASE("noise model validation and JSON round trip") {
  ActionNoiseModel model = ActionNoiseModel::default_model();
  model.validate();

  const Json doc = model.to_json();
  const ActionNoiseModel back = ActionNoiseModel::from_json(doc);
  REQUIRE(back.actions.size() == model.actions.size());
  for (const auto& [action, components] : model.actions) {
    REQUIRE(back.actions.count(action) == 1);
    const auto& other = back.actions.at(action);
    REQUIRE(other.size() == components.size());
    for (size_t i = 0; i < components.size(); ++i) {
      CHECK(other[i].weight == components[i].weight);
      CHECK(other[i].mean == components[i].mean);
      CHECK(other[i].std == components[i].std);
    }
  }

  ActionNoiseModel bad = model;
  bad.actions["move_forward"][0].weight = 0.7;  // no longer sums to 1
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = model;
  bad.actions["move_forward"][0].std.x() = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("flow_from_depth: identity motion means zero flow") {
  const Intrinsics intr = fixtures::small_camera();
  const PosedFrame f = analytic_frame(0, intr, Pose{}, [](double, double) { return 2.0; });
  const FlowField field = flow_from_depth(f, f, Pose{});
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      REQUIRE(field.is_valid(u, v));
      CHECK(std::abs(field.at(u, v)[0]) < 1e-12);
      CHECK(std::abs(field.at(u, v)[1]) < 1e-12);
    }
  }
}

TEST_CASE("flow_from_depth: fronto-parallel plane under pure translation") {
  const Intrinsics intr = fixtures::small_camera();
  const double z = 2.0, tx = 0.1;
  const PosedFrame f = analytic_frame(0, intr, Pose{}, [&](double, double) { return z; });
  Pose ego;  // camera moves +tx, so points shift -tx in the new camera frame
  ego.translation = Eigen::Vector3d(-tx, 0.0, 0.0);
  const FlowField field = flow_from_depth(f, f, ego);
  const double expected_du = -intr.fx * tx / z;  // = -3 px
  int valid_count = 0;
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      if (!field.is_valid(u, v)) continue;
      ++valid_count;
      CHECK(std::abs(field.at(u, v)[0] - expected_du) < 1e-6);
      CHECK(std::abs(field.at(u, v)[1]) < 1e-6);
    }
  }
  // Columns whose target falls left of the image are invalid; the rest valid.
  CHECK(valid_count == (intr.width - 3) * intr.height);

  Pose huge;
  huge.translation = Eigen::Vector3d(-100.0, 0.0, 0.0);
  const FlowField gone = flow_from_depth(f, f, huge);
  for (std::uint8_t flag : gone.valid) CHECK(flag == 0);
}

TEST_CASE("cycle filter scores exact fronto-parallel motion as zero drift") {
  Episode ep;
  ep.episode_id = "translating";
  const Intrinsics intr = fixtures::small_camera();
  for (int i = 0; i < 6; ++i) {
    Pose pose;  // camera at (0.05 i, 0, 0): reference plane z=2 stays fronto-parallel
    pose.translation = Eigen::Vector3d(-0.05 * i, 0.0, 0.0);
    ep.frames.push_back(analytic_frame(i, intr, pose, [](double, double) { return 2.0; }));
  }
  const CycleFilterResult result = filter_views_cycle_consistency(ep);
  REQUIRE(result.pairs.size() == 5);
  for (const PairCheck& pair : result.pairs) {
    REQUIRE(pair.fitted);
    CHECK(pair.ok);
    CHECK(pair.error <= 1e-9);
    CHECK((pair.refined_fw.translation - Eigen::Vector3d(-0.05, 0, 0)).norm() < 1e-9);
    CHECK(rotation_angle(pair.refined_fw.rotation, Eigen::Matrix3d::Identity()) < 1e-9);
  }
  CHECK(result.retained.size() == 6);  // everything kept

  // Bit-identical rerun.
  const CycleFilterResult again = filter_views_cycle_consistency(ep);
  for (size_t i = 0; i < result.pairs.size(); ++i) {
    CHECK(result.pairs[i].error == again.pairs[i].error);
  }
  CHECK(result.retained == again.retained);
}

TEST_CASE("cycle filter recovers an oblique-plane motion with rotation") {
  const Intrinsics intr = fixtures::small_camera();
  // Plane n . X = 1 in the reference (= first camera) frame; inverse depth is
  // affine in pixel coordinates, which the correspondence sampling reproduces
  // exactly up to float storage.
  const Eigen::Vector3d n(0.05, 0.02, 0.5);
  const Pose true_ego = pan_pose(2.0 * kPi / 180.0, Eigen::Vector3d(0.05, 0.01, -0.03));
  const Eigen::Vector3d n2 = true_ego.rotation * n;
  const double d2 = 1.0 + n2.dot(true_ego.translation);

  Episode ep;
  ep.episode_id = "oblique";
  ep.frames.push_back(analytic_frame(0, intr, Pose{}, [&](double xh, double yh) {
    return 1.0 / (n.x() * xh + n.y() * yh + n.z());
  }));
  ep.frames.push_back(analytic_frame(1, intr, true_ego, [&](double xh, double yh) {
    return d2 / (n2.x() * xh + n2.y() * yh + n2.z());
  }));

  const CycleFilterResult result = filter_views_cycle_consistency(ep);
  REQUIRE(result.pairs.size() == 1);
  const PairCheck& pair = result.pairs[0];
  REQUIRE(pair.fitted);
  CHECK(pair.forward_correspondences > 1000);
  CHECK(pair.ok);
  CHECK(pair.error < 1e-6);  // limited only by float32 depth storage
  CHECK(rotation_angle(pair.refined_fw.rotation, true_ego.rotation) < 1e-5);
  CHECK((pair.refined_fw.translation - true_ego.translation).norm() < 1e-5);
}

TEST_CASE("cycle filter rejects a yaw-corrupted pair on a structured scene") {
  Episode ep = static_split_episode(2);
  const std::vector<Pose> ego_true = {Pose{}};
  const std::vector<Pose> ego_bad = {pan_pose(5.0 * kPi / 180.0)};

  const CycleFilterResult clean = filter_views_cycle_consistency(ep, ego_true, ego_true);
  REQUIRE(clean.pairs.size() == 1);
  CHECK(clean.pairs[0].ok);
  CHECK(clean.pairs[0].error <= 1e-9);

  const CycleFilterResult corrupt = filter_views_cycle_consistency(ep, ego_bad, ego_true);
  REQUIRE(corrupt.pairs.size() == 1);
  CHECK_FALSE(corrupt.pairs[0].ok);
  if (corrupt.pairs[0].fitted) CHECK(corrupt.pairs[0].error > 0.1);
  CHECK_FALSE(corrupt.pairs[0].reason.empty());
}

TEST_CASE("cycle filter pads up to min_views by ascending error") {
  const int n = 25;
  Episode ep = static_split_episode(n);
  std::vector<Pose> ego_fw(n - 1), ego_bw(n - 1);
  // Corrupt the first 20 pairs with growing pan; the last 4 stay exact.
  for (int i = 0; i < 20; ++i) ego_fw[i] = pan_pose((5.0 + 0.5 * i) * kPi / 180.0);

  const CycleFilterResult result = filter_views_cycle_consistency(ep, ego_fw, ego_bw);
  int good_pairs = 0;
  for (int i = 0; i < n - 1; ++i) {
    if (i < 20) {
      CHECK_FALSE(result.pairs[i].ok);
    } else {
      CHECK(result.pairs[i].ok);
      ++good_pairs;
    }
  }
  CHECK(good_pairs == 4);
  // Views 20..24 touch a passing pair; the pad picks the five lowest-error
  // dropped views, which sit at the small-corruption end of the chain.
  const std::vector<int> expected = {0, 1, 2, 3, 4, 20, 21, 22, 23, 24};
  CHECK(result.retained == expected);
}

TEST_CASE("cycle filter clips down to max_views by ascending error") {
  Episode ep;
  const Intrinsics intr = fixtures::small_camera();
  for (int i = 0; i < 6; ++i) {
    Pose pose;
    pose.translation = Eigen::Vector3d(-0.04 * i, 0.0, 0.0);
    ep.frames.push_back(analytic_frame(i, intr, pose, split_depth));
  }
  CycleFilterParams params;
  params.min_views = 1;
  params.max_views = 3;
  const CycleFilterResult result = filter_views_cycle_consistency(ep, params);
  for (const auto& pair : result.pairs) CHECK(pair.ok);
  CHECK(result.retained.size() == 3);
  // All errors tie near zero, so the earliest frames win.
  CHECK(result.retained == std::vector<int>{0, 1, 2});
}

TEST_CASE("cycle filter marks pairs without correspondences") {
  Episode ep;
  const Intrinsics intr = fixtures::small_camera();
  for (int i = 0; i < 3; ++i) {
    ep.frames.push_back(analytic_frame(i, intr, Pose{}, [](double, double) { return 0.0; }));
  }
  const CycleFilterResult result = filter_views_cycle_consistency(ep);
  for (const auto& pair : result.pairs) {
    CHECK_FALSE(pair.ok);
    CHECK_FALSE(pair.fitted);
    CHECK(pair.reason == "too few forward correspondences");
  }
  // min_views caps at the episode size: everything comes back (by index).
  CHECK(result.retained == std::vector<int>{0, 1, 2});
}

TEST_CASE("cycle filter validates its inputs") {
  Episode ep = static_split_episode(3);
  CycleFilterParams params;
  params.threshold = 0.0;
  CHECK_THROWS_AS(filter_views_cycle_consistency(ep, params), std::invalid_argument);
  params = CycleFilterParams{};
  params.min_views = 7;
  params.max_views = 3;
  CHECK_THROWS_AS(filter_views_cycle_consistency(ep, params), std::invalid_argument);
  CHECK_THROWS_AS(filter_views_cycle_consistency(ep, {Pose{}}, {Pose{}}),  // wrong count
                  std::invalid_argument);
}

TEST_CASE("refine_poses replaces poses along passing pairs and re-anchors on failures") {
  // Static scene, but the second frame's reported pose claims a pan the depth
  // data contradicts.
  Episode ep = static_split_episode(3);
  ep.frames[1].pose = pan_pose(1.0 * kPi / 180.0, Eigen::Vector3d(0.01, 0.0, 0.005));

  const CycleFilterResult result = filter_views_cycle_consistency(ep);
  REQUIRE(result.pairs.size() == 2);
  REQUIRE(result.pairs[0].fitted);
  REQUIRE(result.pairs[0].ok);

  // Passing pairs chain the re-estimated relative transform onto the
  // previous frame's pose.
  const Episode refined = refine_poses(ep, result);
  const Pose expected1 = result.pairs[0].refined_fw.compose(refined.frames[0].pose);
  CHECK((refined.frames[1].pose.matrix() - expected1.matrix()).norm() < 1e-12);
  CHECK((refined.frames[0].pose.matrix() - ep.frames[0].pose.matrix()).norm() == 0.0);

  // A failing pair keeps the reported pose untouched (re-anchoring the chain).
  CycleFilterResult forced = result;
  forced.pairs[0].ok = false;
  const Episode anchored = refine_poses(ep, forced);
  CHECK((anchored.frames[1].pose.matrix() - ep.frames[1].pose.matrix()).norm() == 0.0);
}
