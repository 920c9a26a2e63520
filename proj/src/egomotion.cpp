#include "mvseg/egomotion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mvseg {

// ---------------------------------------------------------------------------
// Actuation noise.

void ActionNoiseModel::validate() const {
  for (const auto& [action, components] : actions) {
    if (components.empty()) {
      throw std::invalid_argument("noise model: action '" + action + "' has no components");
    }
    double total = 0.0;
    for (const auto& c : components) {
      if (!(c.weight >= 0.0)) {
        throw std::invalid_argument("noise model: negative weight in action '" + action + "'");
      }
      if (!(c.std.minCoeff() >= 0.0)) {
        throw std::invalid_argument("noise model: negative std in action '" + action + "'");
      }
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw std::invalid_argument("noise model: weights of action '" + action +
                                  "' sum to " + std::to_string(total) + ", expected 1");
    }
  }
}

ActionNoiseModel ActionNoiseModel::from_json(const Json& doc) {
  ActionNoiseModel model;
  for (const auto& [action, components] : doc.items()) {
    std::vector<NoiseComponent> parsed;
    for (const auto& c : components) {
      NoiseComponent nc;
      nc.weight = c.at("weight").get<double>();
      const auto& mean = c.at("mean");
      const auto& std_v = c.at("std");
      for (int k = 0; k < 3; ++k) {
        nc.mean[k] = mean.at(k).get<double>();
        nc.std[k] = std_v.at(k).get<double>();
      }
      parsed.push_back(nc);
    }
    model.actions[action] = std::move(parsed);
  }
  model.validate();
  return model;
}

Json ActionNoiseModel::to_json() const {
  Json doc = Json::object();
  for (const auto& [action, components] : actions) {
    Json list = Json::array();
    for (const auto& c : components) {
      list.push_back({{"weight", c.weight},
                      {"mean", {c.mean.x(), c.mean.y(), c.mean.z()}},
                      {"std", {c.std.x(), c.std.y(), c.std.z()}}});
    }
    doc[action] = std::move(list);
  }
  return doc;
}

ActionNoiseModel ActionNoiseModel::default_model() {
  const double deg = 3.14159265358979323846 / 180.0;
  ActionNoiseModel model;
  model.actions["move_forward"] = {
      {1.0, {0.025, 0.001, 0.3 * deg}, {0.005, 0.005, 0.2 * deg}}};
  model.actions["turn_left"] = {
      {1.0, {0.001, 0.0005, 0.35 * deg}, {0.002, 0.002, 0.25 * deg}}};
  model.actions["turn_right"] = {
      {1.0, {0.001, 0.0005, -0.35 * deg}, {0.002, 0.002, 0.25 * deg}}};
  return model;
}

Eigen::Vector3d sample_actuation_noise(const ActionNoiseModel& model, const std::string& action,
                                       std::mt19937_64& rng) {
  const auto it = model.actions.find(action);
  if (it == model.actions.end()) {
    throw std::invalid_argument("sample_actuation_noise: unmodeled action '" + action + "'");
  }
  const auto& components = it->second;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double pick = uniform(rng);
  double cumulative = 0.0;
  size_t chosen = components.size() - 1;  // guard against rounding at the top
  for (size_t i = 0; i < components.size(); ++i) {
    cumulative += components[i].weight;
    if (pick < cumulative) {
      chosen = i;
      break;
    }
  }
  const NoiseComponent& c = components[chosen];
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector3d sample;
  for (int k = 0; k < 3; ++k) sample[k] = c.mean[k] + c.std[k] * gauss(rng);
  return sample;
}

Eigen::Vector3d sample_actuation_noise(const ActionNoiseModel& model, const std::string& action,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_actuation_noise(model, action, rng);
}

// ---------------------------------------------------------------------------
// Flow.

FlowField flow_from_depth(const PosedFrame& src, const PosedFrame& dst, const Pose& ego) {
  FlowField field;
  field.width = src.intr.width;
  field.height = src.intr.height;
  field.valid.assign(static_cast<size_t>(field.width) * field.height, 0);
  field.flow.assign(static_cast<size_t>(field.width) * field.height, {0.0, 0.0});
  for (int v = 0; v < field.height; ++v) {
    for (int u = 0; u < field.width; ++u) {
      const float z = src.depth.at(u, v);
      if (!(z > 0.0f) || !std::isfinite(z)) continue;
      const Eigen::Vector3d point(
          (u - src.intr.cx) / src.intr.fx * z, (v - src.intr.cy) / src.intr.fy * z, z);
      const PixelProjection proj = project_point(ego.apply(point), dst.intr, Pose{});
      if (!proj.in_image) continue;
      const size_t idx = static_cast<size_t>(v) * field.width + u;
      field.valid[idx] = 1;
      field.flow[idx] = {proj.u - u, proj.v - v};
    }
  }
  return field;
}

// ---------------------------------------------------------------------------
// Cycle-consistency filter.

namespace {

struct Correspondences {
  std::vector<Eigen::Vector3d> src;
  std::vector<Eigen::Vector3d> dst;
};

// Warps every valid src pixel into dst with `ego` and samples the observed
// dst surface point at the continuous warped pixel. Inverse depth is affine
// in pixel coordinates on a planar patch, so bilinear interpolation of 1/z is
// exact there; the cross-term gate skips non-planar cells and the depth-jump
// gate skips occlusion boundaries.
Correspondences build_correspondences(const PosedFrame& src, const PosedFrame& dst,
                                      const Pose& ego, const CycleFilterParams& params) {
  Correspondences out;
  const Intrinsics& sk = src.intr;
  const Intrinsics& dk = dst.intr;
  for (int v = 0; v < sk.height; v += params.stride) {
    for (int u = 0; u < sk.width; u += params.stride) {
      const float z = src.depth.at(u, v);
      if (!(z > 0.0f) || !std::isfinite(z)) continue;
      const Eigen::Vector3d point((u - sk.cx) / sk.fx * z, (v - sk.cy) / sk.fy * z, z);
      const Eigen::Vector3d warped = ego.apply(point);
      if (!(warped.z() > 0.0)) continue;
      const double wu = dk.fx * warped.x() / warped.z() + dk.cx;
      const double wv = dk.fy * warped.y() / warped.z() + dk.cy;
      const int x0 = static_cast<int>(std::floor(wu));
      const int y0 = static_cast<int>(std::floor(wv));
      if (x0 < 0 || y0 < 0 || x0 + 1 >= dk.width || y0 + 1 >= dk.height) continue;

      const float d00 = dst.depth.at(x0, y0), d10 = dst.depth.at(x0 + 1, y0);
      const float d01 = dst.depth.at(x0, y0 + 1), d11 = dst.depth.at(x0 + 1, y0 + 1);
      if (!(d00 > 0.0f) || !(d10 > 0.0f) || !(d01 > 0.0f) || !(d11 > 0.0f)) continue;
      if (!std::isfinite(d00) || !std::isfinite(d10) || !std::isfinite(d01) ||
          !std::isfinite(d11)) {
        continue;
      }
      const double l00 = 1.0 / d00, l10 = 1.0 / d10, l01 = 1.0 / d01, l11 = 1.0 / d11;
      const double mean = 0.25 * (l00 + l10 + l01 + l11);
      if (std::abs(l00 + l11 - l10 - l01) > params.planarity_tol * mean) continue;
      const double ax = wu - x0, ay = wv - y0;
      const double lambda = (1 - ax) * (1 - ay) * l00 + ax * (1 - ay) * l10 +
                            (1 - ax) * ay * l01 + ax * ay * l11;
      if (!(lambda > 0.0)) continue;
      const double zd = 1.0 / lambda;
      if (std::abs(warped.z() - zd) > params.depth_jump) continue;
      out.src.push_back(point);
      out.dst.emplace_back((wu - dk.cx) / dk.fx * zd, (wv - dk.cy) / dk.fy * zd, zd);
    }
  }
  return out;
}

PairCheck check_pair(const PosedFrame& src, const PosedFrame& dst, int src_index,
                     const Pose& ego_fw, const Pose& ego_bw, const CycleFilterParams& params) {
  PairCheck check;
  check.src_index = src_index;
  check.dst_index = src_index + 1;

  const Correspondences fwd = build_correspondences(src, dst, ego_fw, params);
  check.forward_correspondences = static_cast<int>(fwd.src.size());
  if (fwd.src.size() < 3) {
    check.reason = "too few forward correspondences";
    return check;
  }
  const Correspondences bwd = build_correspondences(dst, src, ego_bw, params);
  check.backward_correspondences = static_cast<int>(bwd.src.size());
  if (bwd.src.size() < 3) {
    check.reason = "too few backward correspondences";
    return check;
  }
  const auto fit_fw = estimate_rigid_transform(fwd.src, fwd.dst);
  const auto fit_bw = estimate_rigid_transform(bwd.src, bwd.dst);
  if (!fit_fw || !fit_bw) {
    check.reason = "degenerate correspondences";
    return check;
  }
  check.fitted = true;
  check.refined_fw = fit_fw->transform;
  check.refined_bw = fit_bw->transform;

  // Round-trip drift of the full-resolution source cloud through the two
  // re-estimated transforms.
  double sum = 0.0;
  size_t count = 0;
  for (int v = 0; v < src.intr.height; ++v) {
    for (int u = 0; u < src.intr.width; ++u) {
      const float z = src.depth.at(u, v);
      if (!(z > 0.0f) || !std::isfinite(z)) continue;
      const Eigen::Vector3d point((u - src.intr.cx) / src.intr.fx * z,
                                  (v - src.intr.cy) / src.intr.fy * z, z);
      sum += (check.refined_bw.apply(check.refined_fw.apply(point)) - point).norm();
      ++count;
    }
  }
  if (count == 0) {
    check.fitted = false;
    check.reason = "source frame has no valid depth";
    return check;
  }
  check.error = sum / static_cast<double>(count);
  check.ok = check.error <= params.threshold;
  if (!check.ok) check.reason = "cycle error above threshold";
  return check;
}

}  // namespace

CycleFilterResult filter_views_cycle_consistency(const Episode& episode,
                                                 const std::vector<Pose>& ego_fw,
                                                 const std::vector<Pose>& ego_bw,
                                                 const CycleFilterParams& params) {
  const size_t n = episode.frames.size();
  if (!(params.threshold > 0.0)) {
    throw std::invalid_argument("cycle filter: threshold must be positive");
  }
  if (params.min_views > params.max_views) {
    throw std::invalid_argument("cycle filter: min_views exceeds max_views");
  }
  if (params.stride < 1) throw std::invalid_argument("cycle filter: stride must be >= 1");
  if (n > 0 && (ego_fw.size() != n - 1 || ego_bw.size() != n - 1)) {
    throw std::invalid_argument("cycle filter: need exactly frames-1 motion estimates");
  }

  CycleFilterResult result;
  result.view_error.assign(n, std::numeric_limits<double>::infinity());
  for (size_t i = 0; i + 1 < n; ++i) {
    PairCheck check = check_pair(episode.frames[i], episode.frames[i + 1],
                                 static_cast<int>(i), ego_fw[i], ego_bw[i], params);
    result.view_error[i] = std::min(result.view_error[i], check.error);
    result.view_error[i + 1] = std::min(result.view_error[i + 1], check.error);
    result.pairs.push_back(std::move(check));
  }

  std::vector<char> keep(n, 0);
  for (const PairCheck& pair : result.pairs) {
    if (pair.ok) {
      keep[pair.src_index] = 1;
      keep[pair.dst_index] = 1;
    }
  }

  // Rank every frame by its best incident error (ties toward earlier frames)
  // to clip the kept set into [min_views, max_views].
  std::vector<size_t> by_error(n);
  std::iota(by_error.begin(), by_error.end(), size_t{0});
  std::stable_sort(by_error.begin(), by_error.end(), [&](size_t a, size_t b) {
    return result.view_error[a] < result.view_error[b];
  });

  size_t kept = static_cast<size_t>(std::count(keep.begin(), keep.end(), 1));
  const size_t max_views = static_cast<size_t>(params.max_views);
  const size_t min_views = std::min(n, static_cast<size_t>(params.min_views));
  if (kept > max_views) {
    size_t budget = max_views;
    std::vector<char> clipped(n, 0);
    for (size_t idx : by_error) {
      if (keep[idx] && budget > 0) {
        clipped[idx] = 1;
        --budget;
      }
    }
    keep = std::move(clipped);
  } else if (kept < min_views) {
    size_t missing = min_views - kept;
    for (size_t idx : by_error) {
      if (missing == 0) break;
      if (!keep[idx]) {
        keep[idx] = 1;
        --missing;
      }
    }
  }
  for (size_t i = 0; i < n; ++i) {
    if (keep[i]) result.retained.push_back(static_cast<int>(i));
  }
  return result;
}

CycleFilterResult filter_views_cycle_consistency(const Episode& episode,
                                                 const CycleFilterParams& params) {
  std::vector<Pose> ego_fw, ego_bw;
  for (size_t i = 0; i + 1 < episode.frames.size(); ++i) {
    const Pose fw = episode.frames[i + 1].pose.compose(episode.frames[i].pose.inverse());
    ego_fw.push_back(fw);
    ego_bw.push_back(fw.inverse());
  }
  return filter_views_cycle_consistency(episode, ego_fw, ego_bw, params);
}

Episode refine_poses(const Episode& episode, const CycleFilterResult& result) {
  if (result.pairs.size() + 1 != episode.frames.size() && !episode.frames.empty()) {
    throw std::invalid_argument("refine_poses: filter result does not match the episode");
  }
  Episode refined = episode;
  for (size_t i = 0; i + 1 < refined.frames.size(); ++i) {
    const PairCheck& pair = result.pairs[i];
    if (pair.ok && pair.fitted) {
      refined.frames[i + 1].pose = pair.refined_fw.compose(refined.frames[i].pose);
    }
    // Otherwise the reported pose stands and re-anchors the chain.
  }
  return refined;
}

}  // namespace mvseg
