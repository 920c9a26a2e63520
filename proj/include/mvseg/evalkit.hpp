#pragma once

#include <string>
#include <vector>

#include "mvseg/labelgen.hpp"

namespace mvseg {

// ---------------------------------------------------------------------------
// IoU primitives.

// Pixel-box IoU: boxes cover the half-open pixel ranges [x, x+w) x [y, y+h).
// Two empty boxes score 0.
double iou_2d(const PixelBox& a, const PixelBox& b);

// Mask IoU: |a AND b| / |a OR b| over nonzero pixels; dimensions must match.
double iou_2d(const Mask& a, const Mask& b);

// Rotated-box IoU. Default is volumetric: bird's-eye footprint intersection
// (exact Sutherland-Hodgman convex clipping) times the vertical overlap.
// `bev_only` ignores the vertical dimension and compares footprints alone.
double iou_3d(const Box3D& a, const Box3D& b, bool bev_only = false);

// ---------------------------------------------------------------------------
// Detection-evaluation records. Predictions and ground truths pair up only
// within the same group (an image for 2-D, an episode for 3-D) and class.

struct PredictionBox {
  std::string group;  // image key, e.g. "<episode>/<view>"
  int class_id = -1;
  double confidence = 0.0;
  PixelBox bbox;
};

struct TruthBox {
  std::string group;
  int class_id = -1;
  PixelBox bbox;
};

struct Prediction3D {
  std::string group;  // episode key
  int class_id = -1;
  double confidence = 0.0;
  Box3D box;
};

struct Truth3D {
  std::string group;
  int class_id = -1;
  Box3D box;
};

struct ClassResult {
  int class_id = -1;
  double ap = 0.0;
  int gt_count = 0;
};

struct EvalRecord {
  double iou_threshold = 0.5;
  double conf_threshold = 0.0;
  bool defined = false;  // false when there is no ground truth at all
  std::vector<ClassResult> per_class;  // classes with >= 1 ground truth, ascending id
  double map = 0.0;                    // unweighted mean AP over per_class

  // Micro counts over predictions with confidence >= conf_threshold.
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double precision = 0.0;
  bool precision_defined = false;  // false when no prediction passes the threshold
  double recall = 0.0;
};

// Average precision per class with greedy one-to-one matching: predictions in
// descending confidence (ties keep input order), each matched to the highest-
// IoU ground truth of its group and class, counting as a true positive only
// when that IoU clears `iou_threshold` and the truth is still unmatched.
// AP uses all-point interpolation (area under the monotone precision
// envelope); mAP averages classes that have at least one ground truth.
EvalRecord compute_map(const std::vector<PredictionBox>& predictions,
                       const std::vector<TruthBox>& truths, double iou_threshold,
                       double conf_threshold = 0.0);

// Same contract over oriented 3-D boxes. Volumetric IoU by default;
// `bev_only` switches to footprint-only matching.
EvalRecord compute_map_3d(const std::vector<Prediction3D>& predictions,
                          const std::vector<Truth3D>& truths, double iou_threshold,
                          double conf_threshold = 0.0, bool bev_only = false);

struct SweepRow {
  double threshold = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double precision = 0.0;
  bool precision_defined = false;
  double recall = 0.0;
  double map = 0.0;
};

// One row per confidence threshold, evaluating only predictions at or above
// it. tp + fp (the kept-prediction count) is non-increasing in the threshold.
std::vector<SweepRow> pr_sweep(const std::vector<PredictionBox>& predictions,
                               const std::vector<TruthBox>& truths,
                               const std::vector<double>& thresholds, double iou_threshold);

// Human-readable per-class AP table plus the micro precision/recall summary.
std::string format_eval_table(const EvalRecord& record);

}  // namespace mvseg
