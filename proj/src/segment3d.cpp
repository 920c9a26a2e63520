#include "mvseg/segment3d.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <unordered_map>
#include <unordered_set>

#include "mvseg/parallel.hpp"

namespace mvseg {

namespace {

double log_sigmoid(double s) {
  return s >= 0 ? -std::log1p(std::exp(-s)) : s - std::log1p(std::exp(s));
}

Eigen::Matrix<double, 6, 1> raw_features(const CloudPoint& p) {
  Eigen::Matrix<double, 6, 1> f;
  f << p.position.x(), p.position.y(), p.position.z(), p.color.x(), p.color.y(), p.color.z();
  return f;
}

}  // namespace

double UnaryModel::decision_value(const CloudPoint& p) const {
  const Eigen::Matrix<double, 6, 1> f =
      (raw_features(p) - feature_mean).cwiseQuotient(feature_std);
  return weights.dot(f) + bias;
}

std::array<double, 2> UnaryModel::log_probs(const CloudPoint& p) const {
  const double s = decision_value(p);
  return {log_sigmoid(-s), log_sigmoid(s)};  // {log P(bg), log P(fg)}
}

UnaryModel train_unary(const LabeledCloud& cloud, double reg) {
  if (reg <= 0) throw std::invalid_argument("train_unary: reg must be positive");
  std::vector<int> rows;
  std::vector<double> y;
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    if (cloud.labels[i] == PointLabel::Foreground) {
      rows.push_back(static_cast<int>(i));
      y.push_back(1.0);
    } else if (cloud.labels[i] == PointLabel::Background) {
      rows.push_back(static_cast<int>(i));
      y.push_back(0.0);
    }
  }
  const int n = static_cast<int>(rows.size());
  if (y.empty() || std::count(y.begin(), y.end(), 1.0) == 0 ||
      std::count(y.begin(), y.end(), 0.0) == 0) {
    throw std::runtime_error("train_unary: need both foreground and background points");
  }

  UnaryModel model;
  Eigen::MatrixXd raw(n, 6);
  for (int r = 0; r < n; ++r) raw.row(r) = raw_features(cloud.points[rows[r]]).transpose();
  model.feature_mean = raw.colwise().mean().transpose();
  Eigen::MatrixXd centered = raw.rowwise() - model.feature_mean.transpose();
  model.feature_std = (centered.array().square().colwise().mean()).sqrt().transpose();
  static const char* feature_names[6] = {"x", "y", "z", "r", "g", "b"};
  for (int c = 0; c < 6; ++c) {
    if (model.feature_std(c) < 1e-8) {
      model.feature_std(c) = 1e-8;
      model.warnings.push_back(std::string("zero-variance feature '") + feature_names[c] +
                               "' floored to 1e-8");
    }
  }
  const Eigen::MatrixXd x = centered.array().rowwise() / model.feature_std.transpose().array();
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);

  // Newton iterations on sum_i log(1+exp(-y_i s_i)) + reg/2 |w|^2 (bias free),
  // with step halving if a step fails to decrease the loss.
  Eigen::VectorXd wb = Eigen::VectorXd::Zero(7);  // [weights; bias]
  auto loss_at = [&](const Eigen::VectorXd& p) {
    const Eigen::VectorXd s = x * p.head<6>() + Eigen::VectorXd::Constant(n, p(6));
    double loss = 0.5 * reg * p.head<6>().squaredNorm();
    for (int i = 0; i < n; ++i) {
      const double margin = (y[i] > 0.5 ? 1.0 : -1.0) * s(i);
      loss += margin >= 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
    }
    return loss;
  };
  double loss = loss_at(wb);
  for (int iter = 0; iter < 500; ++iter) {
    const Eigen::VectorXd s = x * wb.head<6>() + Eigen::VectorXd::Constant(n, wb(6));
    const Eigen::VectorXd p = s.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    Eigen::VectorXd grad(7);
    grad.head<6>() = x.transpose() * (p - yv) + reg * wb.head<6>();
    grad(6) = (p - yv).sum();
    if (grad.norm() < 1e-6) break;

    const Eigen::VectorXd w_diag = p.array() * (1.0 - p.array()) + 1e-12;
    Eigen::MatrixXd h(7, 7);
    const Eigen::MatrixXd xw = x.array().colwise() * w_diag.array();
    h.topLeftCorner<6, 6>() = x.transpose() * xw + reg * Eigen::MatrixXd::Identity(6, 6);
    h.topRightCorner<6, 1>() = xw.colwise().sum().transpose();
    h.bottomLeftCorner<1, 6>() = h.topRightCorner<6, 1>().transpose();
    h(6, 6) = w_diag.sum();

    const Eigen::VectorXd step = h.ldlt().solve(grad);
    double scale = 1.0;
    for (int backtrack = 0; backtrack < 30; ++backtrack) {
      const Eigen::VectorXd candidate = wb - scale * step;
      const double candidate_loss = loss_at(candidate);
      if (candidate_loss <= loss) {
        wb = candidate;
        loss = candidate_loss;
        break;
      }
      scale *= 0.5;
    }
  }
  model.weights = wb.head<6>();
  model.bias = wb(6);
  return model;
}

double pairwise_kernel(const CloudPoint& a, const CloudPoint& b, const CrfParams& params) {
  const double dx2 = (a.position - b.position).squaredNorm();
  const double dc2 = (a.color - b.color).squaredNorm();
  return params.w_app * std::exp(-dx2 / (2.0 * params.theta_alpha * params.theta_alpha) -
                                 dc2 / (2.0 * params.theta_beta * params.theta_beta)) +
         params.w_smooth * std::exp(-dx2 / (2.0 * params.theta_gamma * params.theta_gamma));
}

Segmentation3D crf_refine(const LabeledCloud& cloud,
                          const std::vector<std::array<double, 2>>& unary_logprob,
                          const CrfParams& params) {
  const size_t n = cloud.points.size();
  if (n == 0) throw std::invalid_argument("crf_refine: empty cloud");
  if (unary_logprob.size() != n) throw std::invalid_argument("crf_refine: unary size mismatch");
  if (params.theta_alpha <= 0 || params.theta_beta <= 0 || params.theta_gamma <= 0 ||
      params.w_app < 0 || params.w_smooth < 0 || params.iterations < 1) {
    throw std::invalid_argument("crf_refine: invalid params");
  }
  for (const auto& lp : unary_logprob) {
    if (!std::isfinite(lp[0]) || !std::isfinite(lp[1])) {
      throw std::invalid_argument("crf_refine: non-finite unary log-probability");
    }
  }

  std::vector<double> q(n), next(n);
  std::vector<std::uint8_t> clamped(n, 0);
  for (size_t i = 0; i < n; ++i) {
    if (cloud.labels[i] == PointLabel::Foreground) {
      q[i] = 1.0;
      clamped[i] = 1;
    } else if (cloud.labels[i] == PointLabel::Background) {
      q[i] = 0.0;
      clamped[i] = 1;
    } else {
      const double m = std::max(unary_logprob[i][0], unary_logprob[i][1]);
      const double eb = std::exp(unary_logprob[i][0] - m);
      const double ef = std::exp(unary_logprob[i][1] - m);
      q[i] = ef / (ef + eb);
    }
  }

  for (int iter = 0; iter < params.iterations; ++iter) {
    parallel_chunks(n, [&](size_t begin, size_t end) {
      for (size_t i = begin; i < end; ++i) {
        if (clamped[i]) {
          next[i] = q[i];
          continue;
        }
        // Potts messages, fixed ascending-j reduction order.
        double m_fg = 0.0, m_bg = 0.0;
        for (size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          const double k = pairwise_kernel(cloud.points[i], cloud.points[j], params);
          m_fg += k * (1.0 - q[j]);
          m_bg += k * q[j];
        }
        const double s_fg = unary_logprob[i][1] - m_fg;
        const double s_bg = unary_logprob[i][0] - m_bg;
        const double m = std::max(s_fg, s_bg);
        const double ef = std::exp(s_fg - m);
        const double eb = std::exp(s_bg - m);
        next[i] = ef / (ef + eb);
      }
    });
    double delta = 0.0;
    for (size_t i = 0; i < n; ++i) delta = std::max(delta, std::abs(next[i] - q[i]));
    q.swap(next);
    if (delta < 1e-5) break;
  }

  Segmentation3D out;
  out.marginal = std::move(q);
  out.object.resize(n);
  for (size_t i = 0; i < n; ++i) out.object[i] = out.marginal[i] > 0.5 ? 1 : 0;
  return out;
}

LabeledCloud aggregate_votes(const Episode& episode, const std::vector<const Detection*>& detections,
                             const Detection& target, const PartitionParams& params) {
  if (detections.empty()) throw std::invalid_argument("aggregate_votes: no detections");
  for (const Detection* d : detections) {
    if (d->class_id != target.class_id) {
      throw std::invalid_argument("aggregate_votes: detections must share the target's class");
    }
  }

  LabeledCloud base = build_partitioned_cloud(episode, target, params);

  // Vote grid: voxels touched by any detection's masked, valid-depth pixels.
  // The target is unprojected explicitly, so it need not be an element of
  // `detections` (a caller-built seed works too).
  std::unordered_set<VoxelKey, VoxelKeyHash> occupied;
  std::unordered_set<VoxelKey, VoxelKeyHash> target_voxels;
  std::vector<const Detection*> sources = detections;
  sources.push_back(&target);
  for (const Detection* d : sources) {
    const PosedFrame* frame = episode.frame_by_view(d->view_index);
    if (!frame) throw std::invalid_argument("aggregate_votes: detection names unknown view");
    const auto points =
        unproject_frame(frame->depth, nullptr, frame->intr, frame->pose, d->view_index,
                        params.stride);
    for (const auto& p : points) {
      if (!d->mask.at(p.u, p.v)) continue;
      if (params.crop_radius > 0 &&
          (p.position - params.crop_center).norm() > params.crop_radius) {
        continue;
      }
      const VoxelKey key = voxel_key(p.position, params.voxel_size);
      occupied.insert(key);
      if (d == &target) target_voxels.insert(key);
    }
  }
  if (occupied.empty()) throw std::runtime_error("aggregate_votes: empty vote grid");
  if (target_voxels.empty()) {
    throw std::runtime_error("aggregate_votes: target detection has no valid-depth pixels");
  }

  // 26-connected components over occupied voxels; keep the largest component
  // that touches the target's own unprojection. Ties break on the smallest
  // voxel key so the choice is deterministic.
  std::unordered_map<VoxelKey, int, VoxelKeyHash> component_of;
  std::vector<std::size_t> component_size;
  std::vector<VoxelKey> component_min_key;
  for (const auto& start : occupied) {
    if (component_of.count(start)) continue;
    const int id = static_cast<int>(component_size.size());
    component_size.push_back(0);
    component_min_key.push_back(start);
    std::deque<VoxelKey> queue{start};
    component_of[start] = id;
    while (!queue.empty()) {
      const VoxelKey cur = queue.front();
      queue.pop_front();
      ++component_size[id];
      component_min_key[id] = std::min(component_min_key[id], cur);
      for (std::int64_t dz = -1; dz <= 1; ++dz) {
        for (std::int64_t dy = -1; dy <= 1; ++dy) {
          for (std::int64_t dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0 && dz == 0) continue;
            const VoxelKey nb{cur[0] + dx, cur[1] + dy, cur[2] + dz};
            if (occupied.count(nb) && !component_of.count(nb)) {
              component_of[nb] = id;
              queue.push_back(nb);
            }
          }
        }
      }
    }
  }

  int chosen = -1;
  for (const auto& key : target_voxels) {
    const int id = component_of.at(key);
    if (chosen < 0 || component_size[id] > component_size[chosen] ||
        (component_size[id] == component_size[chosen] &&
         component_min_key[id] < component_min_key[chosen])) {
      chosen = id;
    }
  }
  if (chosen < 0) throw std::runtime_error("aggregate_votes: no component overlaps the target");

  // Re-initialize: the chosen component is FG; erosion-based FG that fell
  // outside it is demoted to unknown rather than background.
  for (size_t i = 0; i < base.points.size(); ++i) {
    const VoxelKey key = voxel_key(base.points[i].position, params.voxel_size);
    const auto it = component_of.find(key);
    if (it != component_of.end() && it->second == chosen) {
      base.labels[i] = PointLabel::Foreground;
    } else if (base.labels[i] == PointLabel::Foreground) {
      base.labels[i] = PointLabel::Unknown;
    }
  }
  if (base.count(PointLabel::Background) == 0) {
    throw std::runtime_error("aggregate_votes: vote component swallowed all background");
  }
  return base;
}

ObjectSegment segment_object(const Episode& episode, const Detection& seed,
                             const SegmentConfig& config) {
  if (seed.source != "ground_truth_seed" && seed.confidence < config.confidence_threshold) {
    throw std::invalid_argument("segment_object: seed detection below the confidence threshold");
  }
  const PosedFrame* seed_frame = episode.frame_by_view(seed.view_index);
  if (!seed_frame) throw std::invalid_argument("segment_object: seed names unknown view");

  PartitionParams partition = config.partition;
  if (partition.crop_radius > 0) partition.crop_center = estimate_centroid(seed, *seed_frame);

  LabeledCloud cloud;
  if (config.vote_aggregation) {
    std::vector<const Detection*> confident;
    for (const auto& d : episode.detections) {
      if (d.class_id != seed.class_id) continue;
      if (d.source == "ground_truth_seed" || d.confidence >= config.confidence_threshold) {
        confident.push_back(&d);
      }
    }
    cloud = aggregate_votes(episode, confident, seed, partition);
  } else {
    cloud = build_partitioned_cloud(episode, seed, partition);
  }

  const UnaryModel unary = train_unary(cloud, config.unary_reg);
  std::vector<std::array<double, 2>> logprob(cloud.points.size());
  for (size_t i = 0; i < cloud.points.size(); ++i) logprob[i] = unary.log_probs(cloud.points[i]);
  Segmentation3D seg = crf_refine(cloud, logprob, config.crf);

  // Propagate voxel labels back to full-resolution points by voxel lookup.
  std::unordered_set<VoxelKey, VoxelKeyHash> object_voxels;
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    if (seg.object[i]) object_voxels.insert(voxel_key(cloud.points[i].position, partition.voxel_size));
  }
  ObjectSegment out;
  out.class_id = seed.class_id;
  out.seed_view = seed.view_index;
  out.seed_source = seed.source;
  for (const auto& frame : episode.frames) {
    const auto points = unproject_frame(frame.depth, nullptr, frame.intr, frame.pose,
                                        frame.view_index, 1);
    for (const auto& p : points) {
      if (partition.crop_radius > 0 &&
          (p.position - partition.crop_center).norm() > partition.crop_radius) {
        continue;
      }
      if (object_voxels.count(voxel_key(p.position, partition.voxel_size))) {
        out.object_points.push_back(p.position);
      }
    }
  }
  out.cloud = std::move(cloud);
  out.seg = std::move(seg);
  return out;
}

}  // namespace mvseg
