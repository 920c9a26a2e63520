#include "mvseg/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

namespace mvseg {

double iou_2d(const PixelBox& a, const PixelBox& b) {
  const long long x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
  const long long x1 = std::min(a.x + a.w, b.x + b.w);
  const long long y1 = std::min(a.y + a.h, b.y + b.h);
  const long long inter = std::max(0LL, x1 - x0) * std::max(0LL, y1 - y0);
  const long long uni = 1LL * a.w * a.h + 1LL * b.w * b.h - inter;
  return uni <= 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double iou_2d(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("iou_2d: mask dimensions differ");
  }
  long long inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const bool fa = a.data[i] != 0, fb = b.data[i] != 0;
    inter += fa && fb;
    uni += fa || fb;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

double cross2(const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
  return u.x() * v.y() - u.y() * v.x();
}

std::vector<Eigen::Vector2d> footprint(const Box3D& box) {
  const auto corners = box_corners(box);
  std::vector<Eigen::Vector2d> poly(4);
  for (int i = 0; i < 4; ++i) poly[i] = corners[i].head<2>();
  return poly;  // counter-clockwise by construction
}

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  double twice = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    twice += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(twice);
}

// Sutherland-Hodgman: clip a convex subject against each edge of a convex
// counter-clockwise clip polygon.
std::vector<Eigen::Vector2d> clip_convex(std::vector<Eigen::Vector2d> subject,
                                         const std::vector<Eigen::Vector2d>& clip) {
  for (size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Eigen::Vector2d& c1 = clip[e];
    const Eigen::Vector2d& c2 = clip[(e + 1) % clip.size()];
    const Eigen::Vector2d edge = c2 - c1;
    std::vector<Eigen::Vector2d> out;
    out.reserve(subject.size() + 2);
    for (size_t i = 0; i < subject.size(); ++i) {
      const Eigen::Vector2d& p1 = subject[i];
      const Eigen::Vector2d& p2 = subject[(i + 1) % subject.size()];
      const double d1 = cross2(edge, p1 - c1);
      const double d2 = cross2(edge, p2 - c1);
      if (d1 >= 0.0) out.push_back(p1);
      if ((d1 >= 0.0) != (d2 >= 0.0)) {
        out.push_back(p1 + (d1 / (d1 - d2)) * (p2 - p1));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

}  // namespace

double iou_3d(const Box3D& a, const Box3D& b, bool bev_only) {
  const double inter_area = polygon_area(clip_convex(footprint(a), footprint(b)));
  const double area_a = a.dims.x() * a.dims.y();
  const double area_b = b.dims.x() * b.dims.y();
  if (bev_only) {
    const double uni = area_a + area_b - inter_area;
    return uni <= 0.0 ? 0.0 : inter_area / uni;
  }
  const double za0 = a.center.z() - 0.5 * a.dims.z(), za1 = a.center.z() + 0.5 * a.dims.z();
  const double zb0 = b.center.z() - 0.5 * b.dims.z(), zb1 = b.center.z() + 0.5 * b.dims.z();
  const double dz = std::max(0.0, std::min(za1, zb1) - std::max(za0, zb0));
  const double inter = inter_area * dz;
  const double uni = area_a * a.dims.z() + area_b * b.dims.z() - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

namespace {

double all_point_ap(const std::vector<char>& is_tp, size_t gt_count) {
  if (is_tp.empty() || gt_count == 0) return 0.0;
  const size_t n = is_tp.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (size_t k = 0; k < n; ++k) {
    tp += is_tp[k];
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(gt_count);
  }
  for (size_t k = n - 1; k-- > 0;) {  // monotone precision envelope
    precision[k] = std::max(precision[k], precision[k + 1]);
  }
  double ap = 0.0, prev_recall = 0.0;
  for (size_t k = 0; k < n; ++k) {
    if (recall[k] > prev_recall) {
      ap += (recall[k] - prev_recall) * precision[k];
      prev_recall = recall[k];
    }
  }
  return ap;
}

// Shared greedy matcher: `Pred` and `Truth` expose group/class_id (+ Pred
// confidence), `iou` scores a (prediction, truth) pair. Because matching is
// greedy in rank order, the decisions for any confidence-filtered prefix
// coincide with the full run's first decisions, so one pass serves both the
// AP curves and the micro counts at conf_threshold.
template <typename Pred, typename Truth, typename IouFn>
EvalRecord evaluate(const std::vector<Pred>& preds, const std::vector<Truth>& truths,
                    double iou_threshold, double conf_threshold, IouFn&& iou) {
  EvalRecord rec;
  rec.iou_threshold = iou_threshold;
  rec.conf_threshold = conf_threshold;
  rec.defined = !truths.empty();

  std::map<int, std::vector<size_t>> truths_by_class;
  for (size_t i = 0; i < truths.size(); ++i) truths_by_class[truths[i].class_id].push_back(i);

  std::vector<size_t> order(preds.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) {
    return preds[x].confidence > preds[y].confidence;
  });
  std::map<int, std::vector<size_t>> preds_by_class;
  for (size_t idx : order) preds_by_class[preds[idx].class_id].push_back(idx);

  std::set<int> classes;
  for (const auto& [cls, _] : truths_by_class) classes.insert(cls);
  for (const auto& [cls, _] : preds_by_class) classes.insert(cls);

  int micro_tp = 0, micro_fp = 0;
  for (int cls : classes) {
    static const std::vector<size_t> kNone;
    const auto t_it = truths_by_class.find(cls);
    const auto p_it = preds_by_class.find(cls);
    const std::vector<size_t>& tidx = t_it == truths_by_class.end() ? kNone : t_it->second;
    const std::vector<size_t>& pidx = p_it == preds_by_class.end() ? kNone : p_it->second;

    std::vector<char> used(tidx.size(), 0);
    std::vector<char> is_tp;
    is_tp.reserve(pidx.size());
    for (size_t pi : pidx) {
      double best = -1.0;
      size_t best_j = tidx.size();
      for (size_t j = 0; j < tidx.size(); ++j) {
        if (truths[tidx[j]].group != preds[pi].group) continue;
        const double v = iou(preds[pi], truths[tidx[j]]);
        if (v > best) {
          best = v;
          best_j = j;
        }
      }
      const bool hit = best_j < tidx.size() && best >= iou_threshold && !used[best_j];
      if (hit) used[best_j] = 1;
      is_tp.push_back(hit);
      if (preds[pi].confidence >= conf_threshold) {
        micro_tp += hit;
        micro_fp += !hit;
      }
    }
    if (!tidx.empty()) {
      rec.per_class.push_back({cls, all_point_ap(is_tp, tidx.size()), static_cast<int>(tidx.size())});
    }
  }

  if (rec.defined && !rec.per_class.empty()) {
    double sum = 0.0;
    for (const auto& c : rec.per_class) sum += c.ap;
    rec.map = sum / static_cast<double>(rec.per_class.size());
  }

  rec.tp = micro_tp;
  rec.fp = micro_fp;
  rec.fn = static_cast<int>(truths.size()) - micro_tp;
  rec.precision_defined = (micro_tp + micro_fp) > 0;
  rec.precision = rec.precision_defined
                      ? static_cast<double>(micro_tp) / static_cast<double>(micro_tp + micro_fp)
                      : 0.0;
  rec.recall = truths.empty() ? 0.0 : static_cast<double>(micro_tp) / static_cast<double>(truths.size());
  return rec;
}

}  // namespace

EvalRecord compute_map(const std::vector<PredictionBox>& predictions,
                       const std::vector<TruthBox>& truths, double iou_threshold,
                       double conf_threshold) {
  return evaluate(predictions, truths, iou_threshold, conf_threshold,
                  [](const PredictionBox& p, const TruthBox& t) { return iou_2d(p.bbox, t.bbox); });
}

EvalRecord compute_map_3d(const std::vector<Prediction3D>& predictions,
                          const std::vector<Truth3D>& truths, double iou_threshold,
                          double conf_threshold, bool bev_only) {
  return evaluate(predictions, truths, iou_threshold, conf_threshold,
                  [bev_only](const Prediction3D& p, const Truth3D& t) {
                    return iou_3d(p.box, t.box, bev_only);
                  });
}

std::vector<SweepRow> pr_sweep(const std::vector<PredictionBox>& predictions,
                               const std::vector<TruthBox>& truths,
                               const std::vector<double>& thresholds, double iou_threshold) {
  std::vector<SweepRow> rows;
  rows.reserve(thresholds.size());
  for (double threshold : thresholds) {
    std::vector<PredictionBox> kept;
    for (const auto& p : predictions) {
      if (p.confidence >= threshold) kept.push_back(p);
    }
    const EvalRecord rec = compute_map(kept, truths, iou_threshold, 0.0);
    SweepRow row;
    row.threshold = threshold;
    row.tp = rec.tp;
    row.fp = rec.fp;
    row.fn = rec.fn;
    row.precision = rec.precision;
    row.precision_defined = rec.precision_defined;
    row.recall = rec.recall;
    row.map = rec.map;
    rows.push_back(row);
  }
  return rows;
}

std::string format_eval_table(const EvalRecord& record) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %8s %6s\n", "class", "AP", "GT");
  out += line;
  for (const auto& c : record.per_class) {
    std::snprintf(line, sizeof(line), "class_%-6d %8.4f %6d\n", c.class_id, c.ap, c.gt_count);
    out += line;
  }
  if (!record.defined) {
    out += "mAP undefined (no ground truth)\n";
  } else {
    std::snprintf(line, sizeof(line), "mAP %.4f @ IoU %.2f\n", record.map, record.iou_threshold);
    out += line;
  }
  if (record.precision_defined) {
    std::snprintf(line, sizeof(line),
                  "micro @ conf %.2f: precision %.4f recall %.4f (tp %d fp %d fn %d)\n",
                  record.conf_threshold, record.precision, record.recall, record.tp, record.fp,
                  record.fn);
  } else {
    std::snprintf(line, sizeof(line),
                  "micro @ conf %.2f: precision undefined, recall %.4f (tp %d fp %d fn %d)\n",
                  record.conf_threshold, record.recall, record.tp, record.fp, record.fn);
  }
  out += line;
  return out;
}

}  // namespace mvseg
