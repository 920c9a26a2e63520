#pragma once

#include <array>
#include <string>
#include <vector>

#include "mvseg/ingest.hpp"

namespace mvseg {

// Linear classifier over standardized (x, y, z, r, g, b) features with a
// logistic link, so it natively emits calibrated log-probabilities.
struct UnaryModel {
  Eigen::Matrix<double, 6, 1> weights = Eigen::Matrix<double, 6, 1>::Zero();
  double bias = 0.0;
  Eigen::Matrix<double, 6, 1> feature_mean = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Matrix<double, 6, 1> feature_std = Eigen::Matrix<double, 6, 1>::Ones();
  std::vector<std::string> warnings;  // e.g. zero-variance features that were floored

  // Returns {log P(background), log P(foreground)}; the two exponentials sum
  // to 1 by construction.
  std::array<double, 2> log_probs(const CloudPoint& p) const;
  double decision_value(const CloudPoint& p) const;  // pre-sigmoid score
};

// Trains by Newton iterations on the L2-regularized logistic loss
//   sum_i log(1 + exp(-y_i s_i)) + reg/2 * |w|^2   (bias unregularized)
// over the cloud's FG (positive) and BG (negative) points, to gradient norm
// < 1e-6 or 500 iterations. Features are standardized over the training set;
// zero-variance features get their std floored to 1e-8 and a warning.
UnaryModel train_unary(const LabeledCloud& cloud, double reg);

struct CrfParams {
  double w_app = 10.0;
  double w_smooth = 3.0;
  double theta_alpha = 0.2;  // meters, appearance kernel spatial bandwidth
  double theta_beta = 0.1;   // color units, appearance kernel color bandwidth
  double theta_gamma = 0.05; // meters, smoothness kernel bandwidth
  int iterations = 5;
};

struct Segmentation3D {
  std::vector<std::uint8_t> object;  // per point: 1 = object, 0 = background
  std::vector<double> marginal;      // per point: P(object), in [0, 1]
};

// Pairwise kernel between two points:
//   k = w_app * exp(-|dX|^2 / (2 th_a^2) - |dC|^2 / (2 th_b^2))
//     + w_smooth * exp(-|dX|^2 / (2 th_g^2))
double pairwise_kernel(const CloudPoint& a, const CloudPoint& b, const CrfParams& params);

// Fully-connected binary CRF with Potts compatibility, solved by parallel
// mean-field with exact O(N^2) message passing:
//   Q_i(l) ∝ exp(log p_i(l) - sum_{j != i} k(i, j) * Q_j(not l))
// run for params.iterations rounds, stopping early once the largest marginal
// change falls below 1e-5. Cloud points labeled FG/BG are clamped to their
// label (they emit messages but never update). Message sums run in a fixed
// ascending-j order, so results are bit-identical at any thread count.
Segmentation3D crf_refine(const LabeledCloud& cloud,
                          const std::vector<std::array<double, 2>>& unary_logprob,
                          const CrfParams& params);

struct SegmentConfig {
  PartitionParams partition;
  double unary_reg = 1e-2;
  CrfParams crf;
  double confidence_threshold = 0.9;  // minimum seed confidence for detector seeds
  bool vote_aggregation = false;      // multi-view voting FG initialization
};

// segment_object output: the voxel-level cloud and segmentation it computed,
// plus the full-resolution object points recovered by nearest-voxel lookup.
struct ObjectSegment {
  LabeledCloud cloud;
  Segmentation3D seg;
  std::vector<Eigen::Vector3d> object_points;  // full resolution, reference frame
  int class_id = -1;
  int seed_view = -1;
  std::string seed_source = "detector";  // copied from the seed detection
};

// Two-stage segmentation: partition (optionally by multi-view voting), train
// the unary on FG/BG, predict everywhere, refine with the dense CRF, then
// propagate voxel labels back to every full-resolution point.
ObjectSegment segment_object(const Episode& episode, const Detection& seed,
                             const SegmentConfig& config);

// Multi-view voting initialization: every confident detection of the target's
// class is unprojected and voxelized into one vote grid; the largest
// 26-connected component overlapping the target's own unprojection becomes the
// FG initialization, while BG comes from the standard seed-view path. The
// target itself always contributes votes, whether or not it is an element of
// `detections`.
LabeledCloud aggregate_votes(const Episode& episode, const std::vector<const Detection*>& detections,
                             const Detection& target, const PartitionParams& params);

}  // namespace mvseg
