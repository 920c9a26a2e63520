#pragma once

#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mvseg/ingest.hpp"
#include "mvseg/jsonio.hpp"

namespace mvseg {

// ---------------------------------------------------------------------------
// Actuation-noise model: a small Gaussian mixture per action describing the
// pose perturbation (dx, dy, dtheta) the platform actually adds on top of a
// commanded move.

struct NoiseComponent {
  double weight = 1.0;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();  // dx m, dy m, dtheta rad
  Eigen::Vector3d std = Eigen::Vector3d::Zero();   // per-axis standard deviation
};

struct ActionNoiseModel {
  std::map<std::string, std::vector<NoiseComponent>> actions;

  // Throws std::invalid_argument unless every action has components with
  // nonnegative weights summing to 1 and nonnegative stds.
  void validate() const;

  // JSON shape: {action: [{weight, mean[3], std[3]}, ...], ...}
  static ActionNoiseModel from_json(const Json& doc);
  Json to_json() const;

  // Synthetic placeholder calibration (not measured on hardware): one
  // component per action, small forward bias and sub-degree turn jitter.
  static ActionNoiseModel default_model();
};

// Draws a mixture component by weight, then a diagonal Gaussian sample around
// its mean. Throws std::invalid_argument for actions absent from the model.
Eigen::Vector3d sample_actuation_noise(const ActionNoiseModel& model, const std::string& action,
                                       std::mt19937_64& rng);
Eigen::Vector3d sample_actuation_noise(const ActionNoiseModel& model, const std::string& action,
                                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Depth-induced optical flow.

struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> valid;          // row-major, per source pixel
  std::vector<std::array<double, 2>> flow;  // (du, dv); (0, 0) where invalid

  bool is_valid(int x, int y) const { return valid[static_cast<size_t>(y) * width + x] != 0; }
  const std::array<double, 2>& at(int x, int y) const {
    return flow[static_cast<size_t>(y) * width + x];
  }
};

// Pixel displacement src -> dst implied by the source depth map and a camera
// motion estimate (`ego` maps src-camera coordinates to dst-camera
// coordinates). Pixels with invalid depth, behind the destination camera, or
// landing outside the destination frame are flagged invalid.
FlowField flow_from_depth(const PosedFrame& src, const PosedFrame& dst, const Pose& ego);

// ---------------------------------------------------------------------------
// Cycle-consistency view filter: warp each view onto its successor with the
// (possibly noisy) forward motion estimate, re-fit the relative transform
// from depth correspondences, do the same backward, and score the pair by how
// far the forward-then-backward composition moves the source cloud.

struct CycleFilterParams {
  double threshold = 0.1;    // meters of mean round-trip drift tolerated
  int min_views = 10;        // never retain fewer (when the episode has them)
  int max_views = 25;        // never retain more; excess dropped by error
  double depth_jump = 0.5;   // meters; discard correspondences across jumps
  // Correspondence depth is bilinearly interpolated in inverse depth (exact
  // on planar patches); cells whose inverse-depth cross term exceeds this
  // fraction of the cell mean are treated as non-planar and skipped.
  double planarity_tol = 1e-3;
  int stride = 1;  // pixel subsampling when building correspondences
};

struct PairCheck {
  int src_index = -1;  // positions in episode.frames
  int dst_index = -1;
  double error = std::numeric_limits<double>::infinity();  // mean drift, meters
  int forward_correspondences = 0;
  int backward_correspondences = 0;
  bool fitted = false;  // both directions re-estimated successfully
  Pose refined_fw;      // src camera -> dst camera, valid when fitted
  Pose refined_bw;      // dst camera -> src camera, valid when fitted
  bool ok = false;      // fitted and error <= threshold
  std::string reason;   // why the pair was rejected, when !ok
};

struct CycleFilterResult {
  std::vector<PairCheck> pairs;    // one per consecutive frame pair
  std::vector<double> view_error;  // per frame: best incident pair error
  std::vector<int> retained;       // frame positions, ascending
};

// Scores every consecutive pair and retains views incident to at least one
// passing pair, then clips the count into [min_views, max_views] by ascending
// per-view error (ties toward the earlier frame). ego_fw[i] maps camera i to
// camera i+1; ego_bw[i] the reverse; both must have frames-1 entries.
CycleFilterResult filter_views_cycle_consistency(const Episode& episode,
                                                 const std::vector<Pose>& ego_fw,
                                                 const std::vector<Pose>& ego_bw,
                                                 const CycleFilterParams& params = {});

// Convenience: derive the consecutive-pair motion estimates from the
// episode's reported poses.
CycleFilterResult filter_views_cycle_consistency(const Episode& episode,
                                                 const CycleFilterParams& params = {});

// Rebuilds the pose chain from the re-estimated relative transforms: frame 0
// keeps its reported pose; every later frame chains the refined forward
// transform when its incoming pair passed, and falls back to (re-anchors at)
// its reported pose otherwise.
Episode refine_poses(const Episode& episode, const CycleFilterResult& result);

}  // namespace mvseg
