#include "mvseg/geometry.hpp"

#include <cmath>

namespace mvseg {

Pose Pose::inverse() const {
  Pose out;
  out.rotation = rotation.transpose();
  out.translation = -(rotation.transpose() * translation);
  return out;
}

Pose Pose::compose(const Pose& inner) const {
  Pose out;
  out.rotation = rotation * inner.rotation;
  out.translation = rotation * inner.translation + translation;
  return out;
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
  Pose out;
  out.rotation = m.topLeftCorner<3, 3>();
  out.translation = m.topRightCorner<3, 1>();
  return out;
}

Pose Pose::from_row_major(const std::array<double, 16>& m) {
  Eigen::Matrix4d mat;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) mat(r, c) = m[static_cast<size_t>(r) * 4 + c];
  }
  return from_matrix(mat);
}

std::array<double, 16> Pose::to_row_major() const {
  const Eigen::Matrix4d m = matrix();
  std::array<double, 16> out{};
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out[static_cast<size_t>(r) * 4 + c] = m(r, c);
  }
  return out;
}

std::vector<CloudPoint> unproject_frame(const DepthImage& depth, const ColorImage* rgb,
                                        const Intrinsics& K, const Pose& ref_to_cam,
                                        int view_index, int stride) {
  if (stride < 1) stride = 1;
  const Pose cam_to_ref = ref_to_cam.inverse();
  std::vector<CloudPoint> points;
  points.reserve(static_cast<size_t>(depth.size()) / static_cast<size_t>(stride * stride));
  for (int v = 0; v < depth.height; v += stride) {
    for (int u = 0; u < depth.width; u += stride) {
      const float z = depth.at(u, v);
      if (!std::isfinite(z) || z <= 0.0f) continue;
      const double zd = static_cast<double>(z);
      const Eigen::Vector3d cam(zd * (u - K.cx) / K.fx, zd * (v - K.cy) / K.fy, zd);
      CloudPoint p;
      p.position = cam_to_ref.apply(cam);
      if (rgb) {
        const Rgb8 c = rgb->at(u, v);
        p.color = Eigen::Vector3d(c.r, c.g, c.b) / 255.0;
      }
      p.view_index = view_index;
      p.u = u;
      p.v = v;
      points.push_back(p);
    }
  }
  return points;
}

PixelProjection project_point(const Eigen::Vector3d& point, const Intrinsics& K,
                              const Pose& ref_to_cam) {
  PixelProjection out;
  const Eigen::Vector3d cam = ref_to_cam.apply(point);
  out.z = cam.z();
  if (cam.z() <= 0.0) return out;
  out.u = K.fx * cam.x() / cam.z() + K.cx;
  out.v = K.fy * cam.y() / cam.z() + K.cy;
  const int pu = static_cast<int>(std::lround(out.u));
  const int pv = static_cast<int>(std::lround(out.v));
  out.in_image = pu >= 0 && pu < K.width && pv >= 0 && pv < K.height;
  return out;
}

std::vector<PixelProjection> project_points(const std::vector<Eigen::Vector3d>& points,
                                            const Intrinsics& K, const Pose& ref_to_cam) {
  std::vector<PixelProjection> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(project_point(p, K, ref_to_cam));
  return out;
}

std::optional<RigidFit> estimate_rigid_transform(const std::vector<Eigen::Vector3d>& src,
                                                 const std::vector<Eigen::Vector3d>& dst) {
  if (src.size() != dst.size() || src.size() < 3) return std::nullopt;
  const auto n = static_cast<double>(src.size());

  Eigen::Vector3d src_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d dst_mean = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    src_mean += src[i];
    dst_mean += dst[i];
  }
  src_mean /= n;
  dst_mean /= n;

  Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    cross += (src[i] - src_mean) * (dst[i] - dst_mean).transpose();
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  // Collinear (or coincident) centered points leave the rotation about the
  // line unconstrained: require rank >= 2. Planar sets are fine.
  if (sv(1) <= 1e-12 * std::max(sv(0), 1.0)) return std::nullopt;

  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;

  RigidFit fit;
  fit.transform.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  fit.transform.translation = dst_mean - fit.transform.rotation * src_mean;

  double se = 0.0;
  for (size_t i = 0; i < src.size(); ++i) {
    se += (fit.transform.apply(src[i]) - dst[i]).squaredNorm();
  }
  fit.rms = std::sqrt(se / n);
  return fit;
}

}  // namespace mvseg
