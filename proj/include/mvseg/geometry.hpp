#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <vector>

#include "mvseg/image.hpp"

namespace mvseg {

// Pinhole camera model. (cx, cy) is the principal point in pixel coordinates;
// a pixel (u, v) maps to the camera-frame ray ((u - cx) / fx, (v - cy) / fy, 1).
struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
};

// Rigid transform mapping reference-frame points into the camera frame
// (world-to-camera when the reference is the world).
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  Pose inverse() const;
  // Composition: (a.compose(b)).apply(p) == a.apply(b.apply(p)).
  Pose compose(const Pose& inner) const;
  Eigen::Matrix4d matrix() const;

  static Pose from_matrix(const Eigen::Matrix4d& m);
  static Pose from_row_major(const std::array<double, 16>& m);
  std::array<double, 16> to_row_major() const;
};

// A reconstructed 3-D point with appearance and its source pixel.
struct CloudPoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // reference frame, meters
  Eigen::Vector3d color = Eigen::Vector3d::Zero();     // rgb in [0, 1]
  int view_index = -1;
  int u = 0;
  int v = 0;
};

// Back-projects every valid depth pixel into the reference frame. Depth is the
// camera-frame z in meters; pixels with non-finite or non-positive depth are
// skipped. `rgb` may be null (colors stay zero). `stride` subsamples the pixel
// grid (1 = every pixel).
std::vector<CloudPoint> unproject_frame(const DepthImage& depth, const ColorImage* rgb,
                                        const Intrinsics& K, const Pose& ref_to_cam,
                                        int view_index, int stride = 1);

struct PixelProjection {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;  // camera-frame depth
  // True when z > 0 and the rounded pixel lies inside the image bounds.
  bool in_image = false;
};

// Projects reference-frame points through a camera. Points behind the camera
// get in_image = false and undefined (u, v).
std::vector<PixelProjection> project_points(const std::vector<Eigen::Vector3d>& points,
                                            const Intrinsics& K, const Pose& ref_to_cam);
PixelProjection project_point(const Eigen::Vector3d& point, const Intrinsics& K,
                              const Pose& ref_to_cam);

struct RigidFit {
  Pose transform;  // maps src points onto dst
  double rms = 0.0;
};

// Least-squares rigid alignment (SVD with reflection correction). Returns
// nullopt when the correspondence set is too small or degenerate (fewer than
// three points, or the centered points are collinear) to pin down a rotation.
std::optional<RigidFit> estimate_rigid_transform(const std::vector<Eigen::Vector3d>& src,
                                                 const std::vector<Eigen::Vector3d>& dst);

}  // namespace mvseg
