#pragma once

// Shared synthetic-scene builders for tests: small, exactly consistent
// multi-view RGB-D episodes rendered by direct ray casting.

#include <Eigen/Geometry>

#include "mvseg/ingest.hpp"

namespace fixtures {

// A red square patch at z = patch_z floating in front of an infinite gray
// ground plane at z = ground_z, both fronto-parallel, viewed by cameras
// translated along +x. Geometry is consistent across views by construction.
struct PoppedSquareScene {
  double ground_z = 2.0;
  double patch_z = 1.0;
  double patch_half = 0.25;             // patch spans [-h, h]^2 around patch_center
  Eigen::Vector2d patch_center{0.0, 0.0};
  mvseg::Rgb8 patch_color{220, 40, 40};
  mvseg::Rgb8 ground_color{120, 120, 120};

  bool hits_patch(double x, double y) const {
    return std::abs(x - patch_center.x()) <= patch_half &&
           std::abs(y - patch_center.y()) <= patch_half;
  }

  // Renders from a camera at `camera_pos` with identity orientation.
  mvseg::PosedFrame render(int view_index, const mvseg::Intrinsics& intr,
                           const Eigen::Vector3d& camera_pos) const {
    mvseg::PosedFrame f;
    f.view_index = view_index;
    f.intr = intr;
    f.pose.rotation = Eigen::Matrix3d::Identity();
    f.pose.translation = -camera_pos;  // reference -> camera
    f.rgb = mvseg::ColorImage(intr.width, intr.height, ground_color);
    f.depth = mvseg::DepthImage(intr.width, intr.height, 0.0f);
    for (int v = 0; v < intr.height; ++v) {
      for (int u = 0; u < intr.width; ++u) {
        const double dx = (u - intr.cx) / intr.fx;
        const double dy = (v - intr.cy) / intr.fy;
        const double zp = patch_z - camera_pos.z();
        const double x_at_patch = camera_pos.x() + dx * zp;
        const double y_at_patch = camera_pos.y() + dy * zp;
        if (zp > 0 && hits_patch(x_at_patch, y_at_patch)) {
          f.depth.at(u, v) = static_cast<float>(zp);
          f.rgb.at(u, v) = patch_color;
        } else {
          f.depth.at(u, v) = static_cast<float>(ground_z - camera_pos.z());
        }
      }
    }
    return f;
  }

  mvseg::Mask patch_mask(const mvseg::PosedFrame& f) const {
    mvseg::Mask m(f.intr.width, f.intr.height, 0);
    const float zp = static_cast<float>(patch_z + f.pose.translation.z());
    for (int i = 0; i < f.depth.size(); ++i) {
      if (f.depth.data[i] == zp) m.data[i] = 255;
    }
    return m;
  }
};

inline mvseg::Intrinsics small_camera() { return {60.0, 60.0, 31.5, 23.5, 64, 48}; }

inline mvseg::Detection make_detection(int view_index, const mvseg::Mask& mask, int class_id,
                                       double confidence, const std::string& source = "detector") {
  mvseg::Detection d;
  d.view_index = view_index;
  d.class_id = class_id;
  d.confidence = confidence;
  d.mask = mask;
  d.bbox = mvseg::tight_bbox(mask);
  d.source = source;
  return d;
}

// N-view popped-square episode with a detector mask on view 0.
inline mvseg::Episode popped_square_episode(int views, const PoppedSquareScene& scene = {}) {
  mvseg::Episode ep;
  ep.episode_id = "fixture";
  ep.environment_id = "synthetic";
  ep.target_class = 2;
  ep.reference_view = 0;
  const mvseg::Intrinsics intr = small_camera();
  for (int i = 0; i < views; ++i) {
    const Eigen::Vector3d cam_pos(0.08 * i, 0.0, 0.0);
    ep.frames.push_back(scene.render(i, intr, cam_pos));
  }
  ep.detections.push_back(make_detection(0, scene.patch_mask(ep.frames[0]), ep.target_class, 0.95));
  return ep;
}

}  // namespace fixtures
