#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvseg/ingest.hpp"
#include "mvseg/segment3d.hpp"

namespace mvseg {

// Oriented 3-D box: a width x depth footprint rectangle rotated by yaw about
// the vertical (+z) axis and extruded to height. Canonical form keeps
// width >= depth and yaw in (-pi/2, pi/2]; square footprints reduce further
// to (-pi/4, pi/4] so equal inputs always fit to identical boxes.
struct Box3D {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d dims = Eigen::Vector3d::Zero();  // width, depth, height
  double yaw = 0.0;
  int class_id = -1;
};

// Fits the smallest vertical-axis oriented box around the points: height is
// the z extent, the footprint is the exact minimum-area enclosing rectangle
// of the floor-projected convex hull (the optimum has a side collinear with a
// hull edge, so enumerating hull edges is exact). Throws std::invalid_argument
// when the footprint is degenerate (fewer than three distinct points, or all
// collinear).
Box3D fit_box3d(const std::vector<Eigen::Vector3d>& points, int class_id = -1);

// The eight corners: bottom face first, counter-clockwise in the floor plane,
// then the top face in the same order.
std::array<Eigen::Vector3d, 8> box_corners(const Box3D& box);

struct ReprojectedLabel {
  Mask mask;      // frame-sized; all zero when `empty`
  PixelBox bbox;  // tight around the mask
  bool empty = false;  // no object point landed inside the frame
};

// Projects object points into a frame and turns the hit pixels into a single
// connected mask: rasterize, morphological closing (close_radius, computed on
// a padded canvas so regions touching the frame edge keep their border
// pixels), keep the largest 4-connected component, fill interior holes.
// Points behind the camera or outside the image are dropped; if nothing lands
// in frame the result is flagged empty rather than treated as an error.
ReprojectedLabel reproject_to_mask(const std::vector<Eigen::Vector3d>& object_points,
                                   const PosedFrame& frame, int close_radius = 3);

struct ViewLabel {
  int view_index = -1;
  int class_id = -1;
  Mask mask;      // frame-sized; all zero when `empty`
  PixelBox bbox;  // tight around the mask
  std::string provenance = "detector_seed";  // "detector_seed" | "weak_seed"
  bool empty = false;
};

// Dense labels distilled from one segmented episode: a 2-D mask + box per
// view plus one oriented 3-D box.
struct PseudoLabelSet {
  std::string episode_id;
  std::vector<ViewLabel> views;
  Box3D box;
};

struct LabelGenConfig {
  int close_radius = 3;
  // Views whose reprojected mask covers fewer pixels than this are flagged
  // empty: a handful of pixels at a frame edge is too little signal to
  // supervise a detector with. 0 keeps every non-empty view.
  int min_pixels = 0;
};

// Reprojects the segment into every view of the episode (empty views are kept
// and flagged) and fits the 3-D box once over the object points.
PseudoLabelSet generate_pseudolabels(const Episode& episode, const ObjectSegment& segment,
                                     const LabelGenConfig& config = {});

// Writes out_dir/labels_2d.json (COCO-style categories/images/annotations;
// masks stored as boundary polygons on the pixel corner lattice, which
// rasterize back bit-exactly) and out_dir/labels_3d.json (one box per
// episode). Episode ids must be unique across sets.
void export_labels(const std::vector<PseudoLabelSet>& sets,
                   const std::filesystem::path& out_dir);

// Inverse of export_labels: import_labels(export_labels(x)) == x, with masks
// and integer fields bit-exact and box floats at full double precision.
std::vector<PseudoLabelSet> import_labels(const std::filesystem::path& dir);

}  // namespace mvseg
