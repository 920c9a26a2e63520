#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvseg/geometry.hpp"
#include "mvseg/image.hpp"

namespace mvseg {

// Raised for any structural problem with an episode on disk; the message names
// the offending file or manifest field.
struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Detection {
  int view_index = -1;
  int class_id = -1;
  double confidence = 0.0;
  Mask mask;                        // nonzero = foreground
  PixelBox bbox;                    // tight bounding box of mask
  std::string source = "detector";  // "detector" or "ground_truth_seed"
  std::filesystem::path mask_path;  // manifest-relative, kept for round trips
};

struct PosedFrame {
  int view_index = -1;
  ColorImage rgb;
  DepthImage depth;  // meters; <= 0 or non-finite = invalid
  Intrinsics intr;
  Pose pose;  // reference -> camera
  std::filesystem::path rgb_path;
  std::filesystem::path depth_path;
  std::string depth_format = "f32";  // "f32" raw floats | "png16" millimeters
};

struct Episode {
  std::string episode_id;
  std::string environment_id;
  int target_class = -1;
  int reference_view = -1;
  std::vector<PosedFrame> frames;
  std::vector<Detection> detections;

  const PosedFrame* frame_by_view(int view_index) const;
  // Highest confidence; ties broken toward the lowest view index.
  const Detection* best_detection() const;
};

// Loads and fully validates an episode: every referenced file must exist,
// image dimensions must match the declared intrinsics, poses must be rigid,
// detection boxes must be the tight bounding box of their mask.
Episode load_episode(const std::filesystem::path& manifest_path);

// Writes manifest.json plus all frame/mask images under `dir`. Frames go to
// frames/view_NNN.{rgb.png,depth.f32|depth.png16}, masks to masks/det_NNN.png.
// Returns the manifest path.
std::filesystem::path save_episode(const Episode& episode, const std::filesystem::path& dir);

enum class PointLabel : std::uint8_t { Foreground, Background, Unknown };

// Integer grid cell containing a point at the given resolution.
using VoxelKey = std::array<std::int64_t, 3>;
VoxelKey voxel_key(const Eigen::Vector3d& position, double voxel_size);
struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::size_t h = 1469598103934665603ull;
    for (std::int64_t v : k) {
      h ^= static_cast<std::size_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return h;
  }
};

// The partitioned cloud P = FG ∪ BG ∪ UNK: labels are disjoint and exhaustive.
struct LabeledCloud {
  std::vector<CloudPoint> points;
  std::vector<PointLabel> labels;

  std::size_t count(PointLabel label) const;
};

struct PartitionParams {
  int erode_radius = 5;    // applied to the seed mask for FG
  int dilate_radius = 5;   // applied to the inverted seed mask for BG
  // Grows the seed mask before the FG/BG split. The background side of the
  // partition starts directly at the mask boundary, so a detector that
  // under-segments (its masks sit inside the true silhouette) would put true
  // object pixels into clamped background; growing the mask by the detector's
  // worst-case erosion restores the margin. 0 uses the mask as given.
  int seed_dilate_radius = 0;
  double voxel_size = 0.02;
  // Optional ball crop around crop_center (reference frame); keeps the
  // downstream dense CRF tractable. 0 disables cropping.
  double crop_radius = 0.0;
  Eigen::Vector3d crop_center = Eigen::Vector3d::Zero();
  int stride = 1;  // pixel subsampling step during unprojection
};

// Unprojects every frame into the reference frame and labels points: seed-view
// pixels inside the eroded seed mask are foreground, seed-view pixels inside
// the dilated inverse mask are background (foreground wins overlaps), and
// everything else — including all non-seed views — is unknown. The cloud is
// then voxel-downsampled: one point per voxel, majority label with ties
// resolved FG > BG > UNK, represented by the first-seen point of the winning
// label, output ordered by voxel index.
LabeledCloud build_partitioned_cloud(const Episode& episode, const Detection& seed,
                                     const PartitionParams& params);

// Unprojects the masked pixel holding the median valid depth (ties toward the
// lowest (v, u)) into the reference frame — a cheap, outlier-robust guess of
// the detected object's location.
Eigen::Vector3d estimate_centroid(const Detection& detection, const PosedFrame& frame);

}  // namespace mvseg
