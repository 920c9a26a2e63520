#include "mvseg/labelgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>

#include "mvseg/jsonio.hpp"

namespace mvseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

double cross2(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Monotone-chain convex hull, counter-clockwise, collinear points dropped.
std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
                          return a.x() == b.x() && a.y() == b.y();
                        }),
            pts.end());
  const size_t n = pts.size();
  if (n < 3) return pts;
  std::vector<Eigen::Vector2d> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {  // lower chain
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const size_t lower = k + 1;
  for (size_t i = n - 1; i-- > 0;) {  // upper chain
    while (k >= lower && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);  // last point repeats the first
  return hull;
}

// Normalize an angle into (-pi/2, pi/2] using the rectangle's pi symmetry.
double normalize_half_turn(double yaw) {
  while (yaw > kPi / 2) yaw -= kPi;
  while (yaw <= -kPi / 2) yaw += kPi;
  return yaw;
}

}  // namespace

Box3D fit_box3d(const std::vector<Eigen::Vector3d>& points, int class_id) {
  std::vector<Eigen::Vector2d> floor;
  floor.reserve(points.size());
  double z_min = std::numeric_limits<double>::infinity();
  double z_max = -std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    floor.emplace_back(p.x(), p.y());
    z_min = std::min(z_min, p.z());
    z_max = std::max(z_max, p.z());
  }
  const auto hull = convex_hull(std::move(floor));
  if (hull.size() < 3) {
    throw std::invalid_argument("fit_box3d: degenerate footprint (all points collinear)");
  }

  // The minimum-area enclosing rectangle has a side collinear with some hull
  // edge; enumerate edges and keep the best (first hit wins ties, and the hull
  // order is deterministic, so the result is too).
  double best_area = std::numeric_limits<double>::infinity();
  Eigen::Vector2d best_axis(1.0, 0.0);
  for (size_t i = 0; i < hull.size(); ++i) {
    const Eigen::Vector2d edge = hull[(i + 1) % hull.size()] - hull[i];
    const double len = edge.norm();
    if (len == 0.0) continue;
    const Eigen::Vector2d e1 = edge / len;
    const Eigen::Vector2d e2(-e1.y(), e1.x());
    double lo1 = std::numeric_limits<double>::infinity(), hi1 = -lo1;
    double lo2 = lo1, hi2 = -lo1;
    for (const auto& h : hull) {
      const double s = h.dot(e1), t = h.dot(e2);
      lo1 = std::min(lo1, s), hi1 = std::max(hi1, s);
      lo2 = std::min(lo2, t), hi2 = std::max(hi2, t);
    }
    const double area = (hi1 - lo1) * (hi2 - lo2);
    if (area < best_area) {
      best_area = area;
      best_axis = e1;
    }
  }

  // Re-extent along the winning axes over *all* points (not just the hull) so
  // the box provably encloses the inputs despite rounding in the hull step.
  const Eigen::Vector2d e1 = best_axis;
  const Eigen::Vector2d e2(-e1.y(), e1.x());
  double lo1 = std::numeric_limits<double>::infinity(), hi1 = -lo1;
  double lo2 = lo1, hi2 = -lo1;
  for (const auto& p : points) {
    const Eigen::Vector2d q(p.x(), p.y());
    const double s = q.dot(e1), t = q.dot(e2);
    lo1 = std::min(lo1, s), hi1 = std::max(hi1, s);
    lo2 = std::min(lo2, t), hi2 = std::max(hi2, t);
  }

  Box3D box;
  box.class_id = class_id;
  double width = hi1 - lo1;
  double depth = hi2 - lo2;
  double yaw = std::atan2(e1.y(), e1.x());
  if (width < depth) {
    std::swap(width, depth);
    yaw += kPi / 2;
  }
  yaw = normalize_half_turn(yaw);
  if (std::abs(width - depth) <= 1e-12 * std::max(1.0, width)) {
    // Square footprint: quarter-turn symmetry, reduce to (-pi/4, pi/4].
    while (yaw > kPi / 4) yaw -= kPi / 2;
    while (yaw <= -kPi / 4) yaw += kPi / 2;
  }
  const Eigen::Vector2d center2 = 0.5 * (lo1 + hi1) * e1 + 0.5 * (lo2 + hi2) * e2;
  box.center = Eigen::Vector3d(center2.x(), center2.y(), 0.5 * (z_min + z_max));
  box.dims = Eigen::Vector3d(width, depth, z_max - z_min);
  box.yaw = yaw;
  return box;
}

std::array<Eigen::Vector3d, 8> box_corners(const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hw = 0.5 * box.dims.x(), hd = 0.5 * box.dims.y(), hh = 0.5 * box.dims.z();
  const std::array<std::array<double, 2>, 4> local = {{{hw, hd}, {-hw, hd}, {-hw, -hd}, {hw, -hd}}};
  std::array<Eigen::Vector3d, 8> corners;
  for (int i = 0; i < 4; ++i) {
    const double x = c * local[i][0] - s * local[i][1] + box.center.x();
    const double y = s * local[i][0] + c * local[i][1] + box.center.y();
    corners[i] = Eigen::Vector3d(x, y, box.center.z() - hh);
    corners[i + 4] = Eigen::Vector3d(x, y, box.center.z() + hh);
  }
  return corners;
}

ReprojectedLabel reproject_to_mask(const std::vector<Eigen::Vector3d>& object_points,
                                   const PosedFrame& frame, int close_radius) {
  if (close_radius < 0) throw std::invalid_argument("reproject_to_mask: close_radius < 0");
  ReprojectedLabel out;
  out.mask = Mask(frame.intr.width, frame.intr.height, 0);
  const auto projections = project_points(object_points, frame.intr, frame.pose);
  bool any = false;
  for (const auto& pr : projections) {
    if (!pr.in_image) continue;
    const int u = static_cast<int>(std::llround(pr.u));
    const int v = static_cast<int>(std::llround(pr.v));
    out.mask.at(u, v) = 1;
    any = true;
  }
  if (!any) {
    out.empty = true;
    return out;
  }
  if (close_radius > 0) {
    // Close on a padded canvas: regions touching the frame edge must not be
    // carved by the erode half of the closing, so give the dilate half room
    // to spill past the border first.
    const int r = close_radius;
    Mask padded(frame.intr.width + 2 * r, frame.intr.height + 2 * r, 0);
    for (int y = 0; y < frame.intr.height; ++y) {
      for (int x = 0; x < frame.intr.width; ++x) {
        padded.at(x + r, y + r) = out.mask.at(x, y);
      }
    }
    padded = morphology(padded, MorphOp::Dilate, r);
    padded = morphology(padded, MorphOp::Erode, r);
    for (int y = 0; y < frame.intr.height; ++y) {
      for (int x = 0; x < frame.intr.width; ++x) {
        out.mask.at(x, y) = padded.at(x + r, y + r);
      }
    }
  }
  out.mask = largest_component(out.mask);
  out.mask = fill_holes(out.mask);
  out.bbox = tight_bbox(out.mask);
  return out;
}

PseudoLabelSet generate_pseudolabels(const Episode& episode, const ObjectSegment& segment,
                                     const LabelGenConfig& config) {
  PseudoLabelSet set;
  set.episode_id = episode.episode_id;
  set.box = fit_box3d(segment.object_points, segment.class_id);
  const std::string provenance =
      segment.seed_source == "ground_truth_seed" ? "weak_seed" : "detector_seed";
  set.views.reserve(episode.frames.size());
  for (const auto& frame : episode.frames) {
    auto reproj = reproject_to_mask(segment.object_points, frame, config.close_radius);
    ViewLabel label;
    label.view_index = frame.view_index;
    label.class_id = segment.class_id;
    label.mask = std::move(reproj.mask);
    label.bbox = reproj.bbox;
    label.provenance = provenance;
    label.empty = reproj.empty || count_nonzero(label.mask) < config.min_pixels;
    if (label.empty) {
      label.mask = Mask(frame.intr.width, frame.intr.height);
      label.bbox = PixelBox{};
    }
    set.views.push_back(std::move(label));
  }
  return set;
}

namespace {

std::string view_file_name(const std::string& episode_id, int view_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "/frames/view_%03d.rgb.png", view_index);
  return episode_id + buf;
}

Json polygon_json(const Mask& mask) {
  Json flat = Json::array();
  for (const auto& [x, y] : trace_boundary(mask)) {
    flat.push_back(x);
    flat.push_back(y);
  }
  return Json::array({flat});
}

}  // namespace

void export_labels(const std::vector<PseudoLabelSet>& sets,
                   const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  Json boxes = Json::array();
  std::set<std::string> seen_episodes;
  std::set<int> class_ids;
  for (const auto& set : sets) {
    if (!seen_episodes.insert(set.episode_id).second) {
      throw std::invalid_argument("export_labels: duplicate episode_id '" + set.episode_id + "'");
    }
    class_ids.insert(set.box.class_id);
    boxes.push_back({{"episode_id", set.episode_id},
                     {"class_id", set.box.class_id},
                     {"center", {set.box.center.x(), set.box.center.y(), set.box.center.z()}},
                     {"dims", {set.box.dims.x(), set.box.dims.y(), set.box.dims.z()}},
                     {"yaw", set.box.yaw}});
  }

  Json images = Json::array();
  Json annotations = Json::array();
  int image_id = 1, annotation_id = 1;
  for (const auto& set : sets) {
    for (const auto& view : set.views) {
      class_ids.insert(view.class_id);
      images.push_back({{"id", image_id},
                        {"file_name", view_file_name(set.episode_id, view.view_index)},
                        {"episode_id", set.episode_id},
                        {"view_index", view.view_index},
                        {"width", view.mask.width},
                        {"height", view.mask.height}});
      annotations.push_back(
          {{"id", annotation_id},
           {"image_id", image_id},
           {"category_id", view.class_id},
           {"segmentation", view.empty ? Json::array() : polygon_json(view.mask)},
           {"bbox", {view.bbox.x, view.bbox.y, view.bbox.w, view.bbox.h}},
           {"area", count_nonzero(view.mask)},
           {"iscrowd", 0},
           {"score", 1.0},
           {"provenance", view.provenance},
           {"empty", view.empty}});
      ++image_id;
      ++annotation_id;
    }
  }

  Json categories = Json::array();
  for (int id : class_ids) {
    categories.push_back({{"id", id}, {"name", "class_" + std::to_string(id)}});
  }

  write_json_atomic(out_dir / "labels_2d.json",
                    Json{{"categories", categories}, {"images", images}, {"annotations", annotations}});
  write_json_atomic(out_dir / "labels_3d.json", boxes);
}

std::vector<PseudoLabelSet> import_labels(const std::filesystem::path& dir) {
  const Json boxes = read_json_file(dir / "labels_3d.json");
  const Json doc = read_json_file(dir / "labels_2d.json");

  std::vector<PseudoLabelSet> sets;
  std::map<std::string, size_t> set_index;
  for (const auto& entry : boxes) {
    PseudoLabelSet set;
    set.episode_id = entry.at("episode_id").get<std::string>();
    set.box.class_id = entry.at("class_id").get<int>();
    const auto& center = entry.at("center");
    const auto& dims = entry.at("dims");
    set.box.center = Eigen::Vector3d(center.at(0).get<double>(), center.at(1).get<double>(),
                                     center.at(2).get<double>());
    set.box.dims = Eigen::Vector3d(dims.at(0).get<double>(), dims.at(1).get<double>(),
                                   dims.at(2).get<double>());
    set.box.yaw = entry.at("yaw").get<double>();
    if (set_index.count(set.episode_id)) {
      throw std::runtime_error("import_labels: duplicate episode_id '" + set.episode_id +
                               "' in labels_3d.json");
    }
    set_index[set.episode_id] = sets.size();
    sets.push_back(std::move(set));
  }

  struct ImageInfo {
    std::string episode_id;
    int view_index = -1;
    int width = 0;
    int height = 0;
  };
  std::map<int, ImageInfo> image_by_id;
  for (const auto& img : doc.at("images")) {
    ImageInfo info;
    info.episode_id = img.at("episode_id").get<std::string>();
    info.view_index = img.at("view_index").get<int>();
    info.width = img.at("width").get<int>();
    info.height = img.at("height").get<int>();
    image_by_id[img.at("id").get<int>()] = std::move(info);
  }

  for (const auto& ann : doc.at("annotations")) {
    const auto it = image_by_id.find(ann.at("image_id").get<int>());
    if (it == image_by_id.end()) {
      throw std::runtime_error("import_labels: annotation " + ann.at("id").dump() +
                               " references unknown image_id");
    }
    const ImageInfo& info = it->second;
    const auto set_it = set_index.find(info.episode_id);
    if (set_it == set_index.end()) {
      throw std::runtime_error("import_labels: episode '" + info.episode_id +
                               "' has 2-D labels but no 3-D box entry");
    }
    ViewLabel label;
    label.view_index = info.view_index;
    label.class_id = ann.at("category_id").get<int>();
    label.provenance = ann.at("provenance").get<std::string>();
    label.empty = ann.at("empty").get<bool>();
    const auto& bbox = ann.at("bbox");
    label.bbox = PixelBox{bbox.at(0).get<int>(), bbox.at(1).get<int>(), bbox.at(2).get<int>(),
                          bbox.at(3).get<int>()};
    if (label.empty) {
      label.mask = Mask(info.width, info.height, 0);
    } else {
      const auto& polys = ann.at("segmentation");
      if (polys.size() != 1) {
        throw std::runtime_error("import_labels: expected one boundary polygon per annotation");
      }
      std::vector<std::pair<double, double>> polygon;
      const auto& flat = polys.at(0);
      for (size_t i = 0; i + 1 < flat.size(); i += 2) {
        polygon.emplace_back(flat.at(i).get<double>(), flat.at(i + 1).get<double>());
      }
      label.mask = rasterize_polygon(polygon, info.width, info.height);
    }
    sets[set_it->second].views.push_back(std::move(label));
  }
  return sets;
}

}  // namespace mvseg
