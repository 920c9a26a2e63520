#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "mvseg/segment3d.hpp"

using namespace mvseg;
using fixtures::PoppedSquareScene;

namespace {

std::set<VoxelKey> fg_voxels(const LabeledCloud& cloud, double voxel_size) {
  std::set<VoxelKey> keys;
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    if (cloud.labels[i] == PointLabel::Foreground) {
      keys.insert(voxel_key(cloud.points[i].position, voxel_size));
    }
  }
  return keys;
}

}  // namespace

TEST_CASE("voting with a single detection reproduces the standard initialization") {
  const Episode ep = fixtures::popped_square_episode(1);
  PartitionParams params;
  params.erode_radius = 0;
  params.dilate_radius = 0;
  // Patch and ground live at different depths, so no voxel mixes FG with BG,
  // and at z=1 the pixel spacing (~0.017 m) keeps patch voxels 26-connected.
  params.voxel_size = 0.02;

  const LabeledCloud standard = build_partitioned_cloud(ep, ep.detections[0], params);
  const LabeledCloud voted =
      aggregate_votes(ep, {&ep.detections[0]}, ep.detections[0], params);

  CHECK(fg_voxels(standard, params.voxel_size) == fg_voxels(voted, params.voxel_size));
}

TEST_CASE("votes from two views of one object merge into a single fg component") {
  PoppedSquareScene scene;
  Episode ep = fixtures::popped_square_episode(2, scene);
  // Add a confident detection on the second view as well.
  ep.detections.push_back(
      fixtures::make_detection(1, scene.patch_mask(ep.frames[1]), ep.target_class, 0.92));

  PartitionParams params;
  params.erode_radius = 0;
  params.dilate_radius = 0;
  params.voxel_size = 0.02;

  const LabeledCloud voted = aggregate_votes(
      ep, {&ep.detections[0], &ep.detections[1]}, ep.detections[0], params);

  // Every voxel touched by either view's patch unprojection must be FG.
  std::set<VoxelKey> expected;
  for (const Detection& det : ep.detections) {
    const PosedFrame* frame = ep.frame_by_view(det.view_index);
    const auto pts = unproject_frame(frame->depth, nullptr, frame->intr, frame->pose,
                                     det.view_index, 1);
    for (const auto& p : pts) {
      if (det.mask.at(p.u, p.v)) expected.insert(voxel_key(p.position, params.voxel_size));
    }
  }
  const std::set<VoxelKey> got = fg_voxels(voted, params.voxel_size);
  CHECK(got == expected);
  CHECK(voted.count(PointLabel::Background) > 0);
}

TEST_CASE("voting keeps only the component overlapping the target instance") {
  // One handcrafted frame with two same-class objects far apart in depth:
  // object A (target) is a near block, object B a distant block.
  const Intrinsics intr = fixtures::small_camera();
  PosedFrame f;
  f.view_index = 0;
  f.intr = intr;
  f.rgb = ColorImage(intr.width, intr.height, Rgb8{100, 100, 100});
  f.depth = DepthImage(intr.width, intr.height, 3.0f);
  Mask mask_a(intr.width, intr.height, 0);
  Mask mask_b(intr.width, intr.height, 0);
  for (int v = 18; v < 30; ++v) {
    for (int u = 6; u < 18; ++u) {  // near block at z=2
      f.depth.at(u, v) = 2.0f;
      f.rgb.at(u, v) = Rgb8{200, 60, 60};
      mask_a.at(u, v) = 255;
    }
    for (int u = 46; u < 58; ++u) {  // far block at z=7
      f.depth.at(u, v) = 7.0f;
      f.rgb.at(u, v) = Rgb8{60, 200, 60};
      mask_b.at(u, v) = 255;
    }
  }
  Episode ep;
  ep.episode_id = "two-objects";
  ep.environment_id = "synthetic";
  ep.target_class = 4;
  ep.reference_view = 0;
  ep.frames.push_back(std::move(f));
  ep.detections.push_back(fixtures::make_detection(0, mask_a, 4, 0.9));
  ep.detections.push_back(fixtures::make_detection(0, mask_b, 4, 0.9));

  PartitionParams params;
  params.erode_radius = 0;
  params.dilate_radius = 0;
  params.voxel_size = 0.05;

  const LabeledCloud voted = aggregate_votes(
      ep, {&ep.detections[0], &ep.detections[1]}, ep.detections[0], params);

  for (size_t i = 0; i < voted.points.size(); ++i) {
    if (voted.labels[i] == PointLabel::Foreground) {
      CHECK(voted.points[i].position.z() < 3.0);  // all FG on the near object
    }
    if (std::abs(voted.points[i].position.z() - 7.0) < 0.1) {
      CHECK(voted.labels[i] != PointLabel::Foreground);
    }
  }
  CHECK(voted.count(PointLabel::Foreground) > 0);
}

TEST_CASE("segment_object labels the popped square and not the ground") {
  const Episode ep = fixtures::popped_square_episode(4);
  SegmentConfig config;
  // dilate_radius < erode_radius leaves an unknown ring just inside the mask
  // boundary (intrusion depth = dilate_radius) for the CRF to recover.
  config.partition.erode_radius = 2;
  config.partition.dilate_radius = 1;
  config.partition.voxel_size = 0.02;
  const ObjectSegment result = segment_object(ep, ep.detections[0], config);

  size_t patch_total = 0, patch_fg = 0, ground_fg = 0;
  size_t clamped_fg = 0;
  for (size_t i = 0; i < result.cloud.points.size(); ++i) {
    const double z = result.cloud.points[i].position.z();
    if (std::abs(z - 1.0) < 1e-6) {
      ++patch_total;
      patch_fg += result.seg.object[i];
      clamped_fg += result.cloud.labels[i] == PointLabel::Foreground;
    } else {
      ground_fg += result.seg.object[i];
    }
  }
  REQUIRE(patch_total > 0);
  // The boundary ring clamped to BG by the partition stays lost, but the
  // unknown ring must be recovered: far more FG out than was clamped in.
  CHECK(patch_fg > clamped_fg);
  CHECK(double(patch_fg) / double(patch_total) >= 0.8);
  CHECK(ground_fg == 0);  // nothing on the ground plane leaks in

  // Full-resolution propagation returns only patch-depth points, at least one
  // per object voxel.
  CHECK(result.object_points.size() >= patch_fg);
  for (const auto& p : result.object_points) CHECK(std::abs(p.z() - 1.0) < 0.05);
}

TEST_CASE("segment_object completes on a single-view episode") {
  const Episode ep = fixtures::popped_square_episode(1);
  SegmentConfig config;
  config.partition.erode_radius = 1;
  config.partition.dilate_radius = 1;
  config.partition.voxel_size = 0.02;
  const ObjectSegment result = segment_object(ep, ep.detections[0], config);
  CHECK(result.cloud.points.size() > 0);
  CHECK(result.object_points.size() > 0);
}

TEST_CASE("segment_object rejects low-confidence detector seeds") {
  Episode ep = fixtures::popped_square_episode(1);
  ep.detections[0].confidence = 0.3;
  SegmentConfig config;
  config.confidence_threshold = 0.9;
  CHECK_THROWS_AS(segment_object(ep, ep.detections[0], config), std::invalid_argument);

  // The same mask as a weak-supervision seed is accepted regardless.
  ep.detections[0].source = "ground_truth_seed";
  ep.detections[0].confidence = 1.0;
  config.partition.voxel_size = 0.02;
  CHECK_NOTHROW(segment_object(ep, ep.detections[0], config));
}
