#include "mvseg/explore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <queue>
#include <stdexcept>
#include <utility>

namespace mvseg {

namespace {

constexpr double kRayEps = 1e-9;
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_intrinsics(const Intrinsics& intr) {
  if (intr.width <= 0 || intr.height <= 0 || intr.fx == 0.0 || intr.fy == 0.0) {
    throw std::invalid_argument("invalid intrinsics: positive size and nonzero focal required");
  }
}

std::optional<double> ray_ground(const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  if (std::abs(d.z()) < 1e-15) return std::nullopt;
  double s = -o.z() / d.z();
  if (s > kRayEps) return s;
  return std::nullopt;
}

std::optional<double> ray_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                                 const Eigen::Vector3d& c, double radius) {
  const Eigen::Vector3d oc = o - c;
  const double a = d.squaredNorm();
  const double b = 2.0 * d.dot(oc);
  const double c0 = oc.squaredNorm() - radius * radius;
  const double disc = b * b - 4.0 * a * c0;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double s1 = (-b - sq) / (2.0 * a);
  if (s1 > kRayEps) return s1;
  const double s2 = (-b + sq) / (2.0 * a);
  if (s2 > kRayEps) return s2;
  return std::nullopt;
}

std::optional<double> ray_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                              const Primitive& prim) {
  const double cy = std::cos(prim.yaw);
  const double sy = std::sin(prim.yaw);
  const Eigen::Vector3d po = o - prim.center;
  const Eigen::Vector3d lo(cy * po.x() + sy * po.y(), -sy * po.x() + cy * po.y(), po.z());
  const Eigen::Vector3d ld(cy * d.x() + sy * d.y(), -sy * d.x() + cy * d.y(), d.z());
  double t0 = -kInf;
  double t1 = kInf;
  for (int axis = 0; axis < 3; ++axis) {
    const double half = 0.5 * prim.dims[axis];
    if (std::abs(ld[axis]) < 1e-15) {
      if (std::abs(lo[axis]) > half) return std::nullopt;
      continue;
    }
    double ta = (-half - lo[axis]) / ld[axis];
    double tb = (half - lo[axis]) / ld[axis];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 < std::max(t0, kRayEps)) return std::nullopt;
  return t0 > kRayEps ? t0 : t1;
}

std::optional<double> ray_primitive(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                                    const Primitive& prim) {
  if (prim.shape == "sphere") return ray_sphere(o, d, prim.center, prim.radius());
  return ray_box(o, d, prim);
}

Json color_to_json(const Rgb8& c) { return Json::array({c.r, c.g, c.b}); }

Rgb8 color_from_json(const Json& j) {
  Rgb8 c;
  c.r = static_cast<std::uint8_t>(j.at(0).get<int>());
  c.g = static_cast<std::uint8_t>(j.at(1).get<int>());
  c.b = static_cast<std::uint8_t>(j.at(2).get<int>());
  return c;
}

Json vec3_to_json(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from_json(const Json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

}  // namespace

// ---------------------------------------------------------------------------
// World definition.

void SynthWorld::validate() const {
  if (!(bounds.min.x() < bounds.max.x()) || !(bounds.min.y() < bounds.max.y())) {
    throw std::invalid_argument("world bounds: min must be strictly below max");
  }
  if (!(max_depth > 0.0)) throw std::invalid_argument("world max_depth must be positive");
  std::vector<int> ids;
  for (const Category& c : categories) {
    if (c.name.empty()) throw std::invalid_argument("category name must be non-empty");
    if (std::find(ids.begin(), ids.end(), c.id) != ids.end()) {
      throw std::invalid_argument("duplicate category id " + std::to_string(c.id));
    }
    ids.push_back(c.id);
  }
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    const Primitive& p = primitives[i];
    const std::string where = "primitive " + std::to_string(i);
    if (p.shape != "box" && p.shape != "sphere") {
      throw std::invalid_argument(where + ": unknown shape '" + p.shape + "'");
    }
    if (!(p.dims.x() > 0.0 && p.dims.y() > 0.0 && p.dims.z() > 0.0)) {
      throw std::invalid_argument(where + ": dims must be positive");
    }
    if (std::find(ids.begin(), ids.end(), p.class_id) == ids.end()) {
      throw std::invalid_argument(where + ": class_id " + std::to_string(p.class_id) +
                                  " not in the category table");
    }
    for (const Eigen::Vector3d& corner : box_corners(primitive_box(i))) {
      if (corner.x() < bounds.min.x() || corner.x() > bounds.max.x() ||
          corner.y() < bounds.min.y() || corner.y() > bounds.max.y()) {
        throw std::invalid_argument(where + ": footprint outside world bounds");
      }
    }
  }
}

Box3D SynthWorld::primitive_box(std::size_t index) const {
  const Primitive& p = primitives.at(index);
  Box3D box;
  box.center = p.center;
  box.class_id = p.class_id;
  if (p.shape == "sphere") {
    const double d = 2.0 * p.radius();
    box.dims = Eigen::Vector3d(d, d, d);
    box.yaw = 0.0;
  } else {
    box.dims = p.dims;
    box.yaw = p.yaw;
  }
  return box;
}

SynthWorld SynthWorld::from_json(const Json& j) {
  SynthWorld w;
  const Json& b = j.at("bounds");
  w.bounds.min = Eigen::Vector2d(b.at("min").at(0).get<double>(), b.at("min").at(1).get<double>());
  w.bounds.max = Eigen::Vector2d(b.at("max").at(0).get<double>(), b.at("max").at(1).get<double>());
  w.rng_seed = j.value("rng_seed", std::uint64_t{0});
  w.max_depth = j.value("max_depth", 20.0);
  if (j.contains("ground_color")) w.ground_color = color_from_json(j.at("ground_color"));
  if (j.contains("sky_color")) w.sky_color = color_from_json(j.at("sky_color"));
  for (const Json& cj : j.value("categories", Json::array())) {
    w.categories.push_back({cj.at("id").get<int>(), cj.at("name").get<std::string>()});
  }
  for (const Json& pj : j.value("primitives", Json::array())) {
    Primitive p;
    p.shape = pj.at("shape").get<std::string>();
    p.class_id = pj.at("class_id").get<int>();
    p.center = vec3_from_json(pj.at("center"));
    if (p.shape == "sphere") {
      const double r = pj.at("radius").get<double>();
      p.dims = Eigen::Vector3d(2.0 * r, 2.0 * r, 2.0 * r);
      p.yaw = 0.0;
    } else {
      p.dims = vec3_from_json(pj.at("dims"));
      p.yaw = pj.value("yaw", 0.0);
    }
    if (pj.contains("color")) p.color = color_from_json(pj.at("color"));
    w.primitives.push_back(std::move(p));
  }
  return w;
}

Json SynthWorld::to_json() const {
  Json j;
  j["bounds"] = {{"min", Json::array({bounds.min.x(), bounds.min.y()})},
                 {"max", Json::array({bounds.max.x(), bounds.max.y()})}};
  j["rng_seed"] = rng_seed;
  j["max_depth"] = max_depth;
  j["ground_color"] = color_to_json(ground_color);
  j["sky_color"] = color_to_json(sky_color);
  j["categories"] = Json::array();
  for (const Category& c : categories) {
    j["categories"].push_back({{"id", c.id}, {"name", c.name}});
  }
  j["primitives"] = Json::array();
  for (const Primitive& p : primitives) {
    Json pj;
    pj["shape"] = p.shape;
    pj["class_id"] = p.class_id;
    pj["center"] = vec3_to_json(p.center);
    if (p.shape == "sphere") {
      pj["radius"] = p.radius();
    } else {
      pj["dims"] = vec3_to_json(p.dims);
      pj["yaw"] = p.yaw;
    }
    pj["color"] = color_to_json(p.color);
    j["primitives"].push_back(std::move(pj));
  }
  return j;
}

SynthWorld load_world(const std::filesystem::path& path) {
  SynthWorld w = SynthWorld::from_json(read_json_file(path));
  w.validate();
  return w;
}

void save_world(const SynthWorld& world, const std::filesystem::path& path) {
  write_json_atomic(path, world.to_json());
}

// ---------------------------------------------------------------------------
// Cameras.

Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  Eigen::Vector3d forward = target - eye;
  const double n = forward.norm();
  if (n < 1e-12) throw std::invalid_argument("look_at: eye and target coincide");
  forward /= n;
  Eigen::Vector3d right = forward.cross(Eigen::Vector3d(0.0, 0.0, 1.0));
  const double rn = right.norm();
  if (rn < 1e-9) {
    right = Eigen::Vector3d(0.0, -1.0, 0.0);
  } else {
    right /= rn;
  }
  const Eigen::Vector3d down = forward.cross(right);
  Pose pose;
  pose.rotation.row(0) = right;
  pose.rotation.row(1) = down;
  pose.rotation.row(2) = forward;
  pose.translation = -(pose.rotation * eye);
  return pose;
}

Pose planar_camera_pose(double x, double y, double heading, double height, double pitch_down) {
  const Eigen::Vector3d eye(x, y, height);
  const double cp = std::cos(pitch_down);
  const Eigen::Vector3d dir(std::cos(heading) * cp, std::sin(heading) * cp, -std::sin(pitch_down));
  return look_at(eye, eye + dir);
}

// ---------------------------------------------------------------------------
// Rendering.

RenderedView render_frame(const SynthWorld& world, const Pose& ref_to_cam, const Intrinsics& intr) {
  check_intrinsics(intr);
  RenderedView out;
  out.frame.view_index = -1;
  out.frame.intr = intr;
  out.frame.pose = ref_to_cam;
  out.frame.rgb = ColorImage(intr.width, intr.height, world.sky_color);
  out.frame.depth = DepthImage(intr.width, intr.height, 0.0f);
  out.instances = Image<std::int32_t>(intr.width, intr.height, kInstanceNone);

  const Eigen::Matrix3d cam_to_ref = ref_to_cam.rotation.transpose();
  const Eigen::Vector3d center = -(cam_to_ref * ref_to_cam.translation);
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const double xh = (x - intr.cx) / intr.fx;
      const double yh = (y - intr.cy) / intr.fy;
      // Rays are parameterized so that s equals camera-frame depth.
      const Eigen::Vector3d dir = cam_to_ref * Eigen::Vector3d(xh, yh, 1.0);
      double best = kInf;
      int instance = kInstanceNone;
      if (auto s = ray_ground(center, dir); s && *s < best) {
        best = *s;
        instance = kInstanceGround;
      }
      for (std::size_t i = 0; i < world.primitives.size(); ++i) {
        if (auto s = ray_primitive(center, dir, world.primitives[i]); s && *s < best) {
          best = *s;
          instance = static_cast<int>(i);
        }
      }
      if (instance == kInstanceNone) continue;
      out.instances.at(x, y) = instance;
      out.frame.rgb.at(x, y) =
          instance == kInstanceGround ? world.ground_color : world.primitives[instance].color;
      if (best <= world.max_depth) out.frame.depth.at(x, y) = static_cast<float>(best);
    }
  }
  return out;
}

Mask amodal_mask(const SynthWorld& world, std::size_t primitive_index, const Pose& ref_to_cam,
                 const Intrinsics& intr) {
  check_intrinsics(intr);
  const Primitive& prim = world.primitives.at(primitive_index);
  Mask mask(intr.width, intr.height, 0);
  const Eigen::Matrix3d cam_to_ref = ref_to_cam.rotation.transpose();
  const Eigen::Vector3d center = -(cam_to_ref * ref_to_cam.translation);
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const double xh = (x - intr.cx) / intr.fx;
      const double yh = (y - intr.cy) / intr.fy;
      const Eigen::Vector3d dir = cam_to_ref * Eigen::Vector3d(xh, yh, 1.0);
      if (ray_primitive(center, dir, prim)) mask.at(x, y) = 255;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Mock detector.

std::vector<MockDetection> mock_detect(const SynthWorld& world, const RenderedView& view,
                                       const MockDetectorModel& model, std::mt19937_64& rng) {
  const int w = view.instances.width;
  const int h = view.instances.height;
  std::vector<int> visible_count(world.primitives.size(), 0);
  std::vector<Mask> visible(world.primitives.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = view.instances.at(x, y);
      if (id < 0) continue;
      if (visible_count[id] == 0) visible[id] = Mask(w, h, 0);
      visible[id].at(x, y) = 255;
      ++visible_count[id];
    }
  }

  std::vector<MockDetection> out;
  for (std::size_t i = 0; i < world.primitives.size(); ++i) {
    if (visible_count[i] == 0) continue;
    const Mask amodal = amodal_mask(world, i, view.frame.pose, view.frame.intr);
    const int amodal_count = count_nonzero(amodal);
    const double fraction = static_cast<double>(visible_count[i]) / amodal_count;
    double conf = model.base_conf * std::pow(fraction, model.occlusion_exponent);
    conf = std::clamp(conf, 0.0, 1.0);

    const int erode_radius = std::uniform_int_distribution<int>(0, 2)(rng);
    int class_id = world.primitives[i].class_id;
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < model.misclass_rate) {
      std::vector<int> others;
      for (const Category& c : world.categories) {
        if (c.id != class_id) others.push_back(c.id);
      }
      class_id = others.empty()
                     ? class_id + 1
                     : others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
    }

    Mask mask = morphology(visible[i], MorphOp::Erode, erode_radius);
    if (count_nonzero(mask) == 0) mask = visible[i];

    MockDetection det;
    det.instance = static_cast<int>(i);
    det.visible_fraction = fraction;
    det.detection.view_index = view.frame.view_index;
    det.detection.class_id = class_id;
    det.detection.confidence = conf;
    det.detection.bbox = tight_bbox(mask);
    det.detection.mask = std::move(mask);
    det.detection.source = "detector";
    out.push_back(std::move(det));
  }
  return out;
}

std::vector<MockDetection> mock_detect(const SynthWorld& world, const RenderedView& view,
                                       const MockDetectorModel& model) {
  std::mt19937_64 rng(model.rng_seed);
  return mock_detect(world, view, model, rng);
}

// ---------------------------------------------------------------------------
// Occupancy mapping.

Eigen::Vector2i OccupancyGrid::cell_of(const Eigen::Vector2d& p) const {
  return {static_cast<int>(std::floor((p.x() - origin.x()) / resolution)),
          static_cast<int>(std::floor((p.y() - origin.y()) / resolution))};
}

Eigen::Vector2d OccupancyGrid::center_of(const Eigen::Vector2i& cell) const {
  return {origin.x() + (cell.x() + 0.5) * resolution, origin.y() + (cell.y() + 0.5) * resolution};
}

std::size_t OccupancyGrid::count(CellState state) const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), state));
}

OccupancyGrid build_occupancy_grid(const std::vector<PosedFrame>& frames,
                                   const OccupancyParams& params) {
  if (!(params.resolution > 0.0)) throw std::invalid_argument("occupancy resolution must be positive");
  if (params.ground_tol < 0.0 || params.band_min <= params.ground_tol ||
      params.band_max <= params.band_min) {
    throw std::invalid_argument("occupancy band: require 0 <= ground_tol < band_min < band_max");
  }
  if (frames.empty()) throw std::invalid_argument("build_occupancy_grid: at least one frame");

  // (x, y, occupied-evidence) for every classified point.
  std::vector<std::pair<Eigen::Vector2d, bool>> points;
  for (const PosedFrame& f : frames) {
    for (const CloudPoint& p : unproject_frame(f.depth, nullptr, f.intr, f.pose, f.view_index)) {
      const double z = p.position.z();
      if (z >= params.band_min && z <= params.band_max) {
        points.push_back({{p.position.x(), p.position.y()}, true});
      } else if (std::abs(z) <= params.ground_tol) {
        points.push_back({{p.position.x(), p.position.y()}, false});
      }
    }
  }

  OccupancyGrid grid;
  grid.resolution = params.resolution;
  if (points.empty()) return grid;

  long long ix0 = std::numeric_limits<long long>::max();
  long long iy0 = std::numeric_limits<long long>::max();
  long long ix1 = std::numeric_limits<long long>::min();
  long long iy1 = std::numeric_limits<long long>::min();
  for (const auto& [p, occ] : points) {
    const long long ix = static_cast<long long>(std::floor(p.x() / params.resolution));
    const long long iy = static_cast<long long>(std::floor(p.y() / params.resolution));
    ix0 = std::min(ix0, ix);
    iy0 = std::min(iy0, iy);
    ix1 = std::max(ix1, ix);
    iy1 = std::max(iy1, iy);
  }
  grid.origin = Eigen::Vector2d(ix0 * params.resolution, iy0 * params.resolution);
  grid.width = static_cast<int>(ix1 - ix0 + 1);
  grid.height = static_cast<int>(iy1 - iy0 + 1);
  grid.cells.assign(static_cast<std::size_t>(grid.width) * grid.height, CellState::Unknown);

  // Free evidence first, occupied second: occupied always wins, so the result
  // is independent of frame and point order.
  for (const auto& [p, occ] : points) {
    if (occ) continue;
    const Eigen::Vector2i c = grid.cell_of(p);
    grid.at(c.x(), c.y()) = CellState::Free;
  }
  for (const auto& [p, occ] : points) {
    if (!occ) continue;
    const Eigen::Vector2i c = grid.cell_of(p);
    grid.at(c.x(), c.y()) = CellState::Occupied;
  }
  return grid;
}

OccupancyGrid build_occupancy_grid(const std::vector<PosedFrame>& frames, double resolution) {
  OccupancyParams params;
  params.resolution = resolution;
  return build_occupancy_grid(frames, params);
}

OccupancyGrid expand_to_include(const OccupancyGrid& grid,
                                const std::vector<Eigen::Vector2d>& points) {
  if (points.empty()) return grid;
  const double res = grid.resolution;
  long long ix0, iy0, ix1, iy1;
  bool has = grid.width > 0 && grid.height > 0;
  if (has) {
    ix0 = std::llround(grid.origin.x() / res);
    iy0 = std::llround(grid.origin.y() / res);
    ix1 = ix0 + grid.width - 1;
    iy1 = iy0 + grid.height - 1;
  } else {
    ix0 = iy0 = std::numeric_limits<long long>::max();
    ix1 = iy1 = std::numeric_limits<long long>::min();
  }
  for (const Eigen::Vector2d& p : points) {
    const long long ix = static_cast<long long>(std::floor(p.x() / res));
    const long long iy = static_cast<long long>(std::floor(p.y() / res));
    ix0 = std::min(ix0, ix);
    iy0 = std::min(iy0, iy);
    ix1 = std::max(ix1, ix);
    iy1 = std::max(iy1, iy);
  }
  OccupancyGrid out;
  out.resolution = res;
  out.origin = Eigen::Vector2d(ix0 * res, iy0 * res);
  out.width = static_cast<int>(ix1 - ix0 + 1);
  out.height = static_cast<int>(iy1 - iy0 + 1);
  out.cells.assign(static_cast<std::size_t>(out.width) * out.height, CellState::Unknown);
  if (has) {
    const long long dx = std::llround(grid.origin.x() / res) - ix0;
    const long long dy = std::llround(grid.origin.y() / res) - iy0;
    for (int y = 0; y < grid.height; ++y) {
      for (int x = 0; x < grid.width; ++x) {
        out.at(static_cast<int>(x + dx), static_cast<int>(y + dy)) = grid.at(x, y);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Goal sampling.

Eigen::Vector2i sample_goal(const OccupancyGrid& grid, const Eigen::Vector2d& centroid,
                            double r_min, double r_max, std::uint64_t seed) {
  if (!(r_min < r_max) || r_min < 0.0) {
    throw std::invalid_argument("sample_goal: require 0 <= r_min < r_max");
  }
  std::vector<Eigen::Vector2i> candidates;
  for (int iy = 0; iy < grid.height; ++iy) {
    for (int ix = 0; ix < grid.width; ++ix) {
      const double d = (grid.center_of({ix, iy}) - centroid).norm();
      if (d >= r_min && d <= r_max) candidates.push_back({ix, iy});
    }
  }
  if (candidates.empty()) throw std::runtime_error("sample_goal: annulus contains no grid cells");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Vector2i c = candidates[pick(rng)];
    if (grid.at(c.x(), c.y()) == CellState::Free) return c;
  }
  throw std::runtime_error("sample_goal: no free cell in the annulus after 1000 trials");
}

// ---------------------------------------------------------------------------
// Fast-marching planner.

namespace {

// Neighbor ring: even entries are axis steps, odd entries diagonals; entries
// k and k+1 (mod 8) are the vertices of one update triangle.
constexpr int kDx8[8] = {1, 1, 0, -1, -1, -1, 0, 1};
constexpr int kDy8[8] = {0, 1, 1, 1, 0, -1, -1, -1};

}  // namespace

PathPlan plan_path(const OccupancyGrid& grid, const Eigen::Vector2i& start,
                   const Eigen::Vector2i& goal) {
  if (!grid.in_bounds(start.x(), start.y()) || !grid.in_bounds(goal.x(), goal.y())) {
    throw std::invalid_argument("plan_path: start/goal outside the grid");
  }
  if (grid.at(start.x(), start.y()) != CellState::Free) {
    throw std::invalid_argument("plan_path: start cell is not free");
  }
  if (grid.at(goal.x(), goal.y()) != CellState::Free) {
    throw std::invalid_argument("plan_path: goal cell is not free");
  }
  if (start == goal) return {{start}, 0.0};

  const int w = grid.width;
  const int ht = grid.height;
  const double h = grid.resolution;
  const double diag = h * std::numbers::sqrt2;
  const std::size_t n = static_cast<std::size_t>(w) * ht;
  auto index = [w](int x, int y) { return static_cast<std::size_t>(y) * w + x; };

  std::vector<double> time(n, kInf);
  std::vector<std::uint8_t> accepted(n, 0);

  // Godunov update at (x, y) from accepted neighbors: single-vertex updates
  // plus the two-vertex solve on each axis/diagonal triangle. The two-vertex
  // arrival is Ta + sqrt(h^2 - (Td - Ta)^2), valid while the interior
  // minimizer exists (Ta - h/sqrt(2) <= Td <= Ta).
  auto relax = [&](int x, int y) {
    double neighbor_t[8];
    bool neighbor_ok[8];
    for (int k = 0; k < 8; ++k) {
      const int nx = x + kDx8[k];
      const int ny = y + kDy8[k];
      neighbor_ok[k] = grid.in_bounds(nx, ny) && accepted[index(nx, ny)];
      neighbor_t[k] = neighbor_ok[k] ? time[index(nx, ny)] : kInf;
    }
    double best = kInf;
    for (int k = 0; k < 8; ++k) {
      if (!neighbor_ok[k]) continue;
      best = std::min(best, neighbor_t[k] + (k % 2 == 0 ? h : diag));
    }
    for (int k = 0; k < 8; k += 2) {
      if (!neighbor_ok[k]) continue;
      const double ta = neighbor_t[k];
      for (int j : {(k + 1) % 8, (k + 7) % 8}) {
        if (!neighbor_ok[j]) continue;
        const double delta = neighbor_t[j] - ta;
        if (delta <= 0.0 && delta >= -h / std::numbers::sqrt2) {
          best = std::min(best, ta + std::sqrt(h * h - delta * delta));
        }
      }
    }
    return best;
  };

  using HeapEntry = std::pair<double, std::size_t>;  // ties resolved by index
  std::priority_queue<HeapEntry, std::vector<HeapEntry>, std::greater<>> heap;
  const std::size_t start_idx = index(start.x(), start.y());
  const std::size_t goal_idx = index(goal.x(), goal.y());
  time[goal_idx] = 0.0;
  heap.push({0.0, goal_idx});
  while (!heap.empty()) {
    const auto [t, idx] = heap.top();
    heap.pop();
    if (accepted[idx] || t != time[idx]) continue;
    accepted[idx] = 1;
    if (idx == start_idx) break;
    const int cx = static_cast<int>(idx % w);
    const int cy = static_cast<int>(idx / w);
    for (int k = 0; k < 8; ++k) {
      const int nx = cx + kDx8[k];
      const int ny = cy + kDy8[k];
      if (!grid.in_bounds(nx, ny) || grid.at(nx, ny) != CellState::Free) continue;
      const std::size_t nidx = index(nx, ny);
      if (accepted[nidx]) continue;
      const double cand = relax(nx, ny);
      if (cand < time[nidx]) {
        time[nidx] = cand;
        heap.push({cand, nidx});
      }
    }
  }

  if (!std::isfinite(time[start_idx])) {
    throw std::runtime_error("plan_path: goal unreachable from start (infinite arrival time)");
  }

  // Strict descent of the arrival time; among strictly-downhill free
  // neighbors pick the one minimizing T + step cost (first wins ties).
  PathPlan plan;
  plan.arrival_time = time[start_idx];
  plan.cells.push_back(start);
  Eigen::Vector2i cur = start;
  while (cur != goal) {
    const double tc = time[index(cur.x(), cur.y())];
    double best_score = kInf;
    Eigen::Vector2i best_cell = cur;
    bool found = false;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const int nx = cur.x() + dx;
        const int ny = cur.y() + dy;
        if (!grid.in_bounds(nx, ny) || grid.at(nx, ny) != CellState::Free) continue;
        const double tn = time[index(nx, ny)];
        if (!(tn < tc)) continue;
        const double score = tn + (dx != 0 && dy != 0 ? diag : h);
        if (score < best_score) {
          best_score = score;
          best_cell = {nx, ny};
          found = true;
        }
      }
    }
    if (!found || plan.cells.size() > n) {
      throw std::runtime_error("plan_path: arrival-time descent stalled");
    }
    cur = best_cell;
    plan.cells.push_back(cur);
  }
  return plan;
}

double path_length(const std::vector<Eigen::Vector2i>& cells, double resolution) {
  double total = 0.0;
  for (std::size_t i = 1; i < cells.size(); ++i) {
    const Eigen::Vector2i d = cells[i] - cells[i - 1];
    total += resolution * std::sqrt(static_cast<double>(d.x() * d.x() + d.y() * d.y()));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Episode loop.

namespace {

// Signed planar clearance test for the agent disc against world bounds and
// primitive footprints (all primitives obstruct regardless of height).
bool collides(const SynthWorld& world, double x, double y, double radius) {
  if (x < world.bounds.min.x() + radius || x > world.bounds.max.x() - radius ||
      y < world.bounds.min.y() + radius || y > world.bounds.max.y() - radius) {
    return true;
  }
  for (const Primitive& p : world.primitives) {
    if (p.shape == "sphere") {
      if (std::hypot(x - p.center.x(), y - p.center.y()) <= p.radius() + radius) return true;
      continue;
    }
    const double cy = std::cos(p.yaw);
    const double sy = std::sin(p.yaw);
    const double dx = x - p.center.x();
    const double dy = y - p.center.y();
    const double lx = cy * dx + sy * dy;
    const double ly = -sy * dx + cy * dy;
    const double qx = std::abs(lx) - 0.5 * p.dims.x();
    const double qy = std::abs(ly) - 0.5 * p.dims.y();
    const double outside = std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
    const double inside = std::min(std::max(qx, qy), 0.0);
    if (outside + inside <= radius) return true;
  }
  return false;
}

PosedFrame depth_only_frame(const RenderedView& view, const Pose& true_pose) {
  PosedFrame f;
  f.view_index = -1;
  f.depth = view.frame.depth;
  f.intr = view.frame.intr;
  f.pose = true_pose;
  return f;
}

}  // namespace

bool planar_clear(const SynthWorld& world, double x, double y, double radius) {
  return !collides(world, x, y, radius);
}

EpisodeRun run_episode(const SynthWorld& world, const AgentState& spawn,
                       const PolicyConfig& config) {
  world.validate();
  check_intrinsics(config.intr);
  if (config.n_views < 1) throw std::invalid_argument("run_episode: n_views must be >= 1");
  if (!(config.goal_r_min < config.goal_r_max) || config.goal_r_min < 0.0) {
    throw std::invalid_argument("run_episode: require 0 <= goal_r_min < goal_r_max");
  }
  if (config.max_explore_steps < 1 || config.max_goal_attempts < 1) {
    throw std::invalid_argument("run_episode: step/attempt budgets must be >= 1");
  }
  if (!(config.forward_step > 0.0) || !(config.turn_step > 0.0)) {
    throw std::invalid_argument("run_episode: forward_step and turn_step must be positive");
  }
  if (spawn.position.x() < world.bounds.min.x() || spawn.position.x() > world.bounds.max.x() ||
      spawn.position.y() < world.bounds.min.y() || spawn.position.y() > world.bounds.max.y()) {
    throw std::invalid_argument("run_episode: spawn position outside world bounds");
  }
  if (config.noise) config.noise->validate();

  EpisodeRun run;
  run.episode.episode_id = config.episode_id;
  run.episode.environment_id = config.environment_id;
  run.episode.reference_view = 0;
  run.gt.episode_id = config.episode_id;

  std::mt19937_64 rng(config.rng_seed);
  double tx = spawn.position.x();
  double ty = spawn.position.y();
  double tth = spawn.heading;
  double rx = tx, ry = ty, rth = tth;  // odometry-integrated (reported) state
  const double cam_h = spawn.camera_height;

  // True motion executes commands exactly; when enabled, noise corrupts only
  // the odometry readings integrated into the reported state. Samples scale
  // linearly with command magnitude relative to the nominal action.
  auto turn = [&](double dth, bool with_noise) {
    tth = wrap_angle(tth + dth);
    if (with_noise && config.noise) {
      const char* action = dth >= 0.0 ? "turn_left" : "turn_right";
      const Eigen::Vector3d s =
          sample_actuation_noise(*config.noise, action, rng) * (std::abs(dth) / config.turn_step);
      const double rc = std::cos(rth);
      const double rs = std::sin(rth);
      rx += rc * s.x() - rs * s.y();
      ry += rs * s.x() + rc * s.y();
      rth = wrap_angle(rth + dth + s.z());
    } else {
      rx = tx;
      ry = ty;
      rth = tth;
    }
  };
  auto advance = [&](double dist, bool with_noise) {
    tx += std::cos(tth) * dist;
    ty += std::sin(tth) * dist;
    if (with_noise && config.noise) {
      const Eigen::Vector3d s = sample_actuation_noise(*config.noise, "move_forward", rng) *
                                (dist / config.forward_step);
      const double rc = std::cos(rth);
      const double rs = std::sin(rth);
      rx += rc * (dist + s.x()) - rs * s.y();
      ry += rs * (dist + s.x()) + rc * s.y();
      rth = wrap_angle(rth + s.z());
    } else {
      rx = tx;
      ry = ty;
      rth = tth;
    }
  };

  std::vector<PosedFrame> observed;               // every render, true poses, for mapping
  std::vector<Eigen::Vector2d> traversed{spawn.position};  // physically visited

  // Phase 1: random walk until a confident detection locks the target.
  bool locked = false;
  RenderedView seed_view;
  MockDetection seed_det;
  Pose seed_pose;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (int step = 0; step < config.max_explore_steps && !locked; ++step) {
    ++run.explore_steps;
    const Pose cam = planar_camera_pose(tx, ty, tth, cam_h, 0.0);
    RenderedView view = render_frame(world, cam, config.intr);
    observed.push_back(depth_only_frame(view, cam));
    std::vector<MockDetection> dets = mock_detect(world, view, config.detector, rng);
    const MockDetection* best = nullptr;
    for (const MockDetection& d : dets) {
      if (d.detection.confidence >= config.conf_threshold &&
          (!best || d.detection.confidence > best->detection.confidence)) {
        best = &d;
      }
    }
    if (best) {
      PosedFrame seed_frame = view.frame;
      seed_frame.view_index = 0;
      seed_frame.pose = cam;
      try {
        centroid = estimate_centroid(best->detection, seed_frame);
      } catch (const std::exception&) {
        best = nullptr;  // confident but depthless; keep exploring
      }
      if (best) {
        locked = true;
        seed_det = *best;
        seed_pose = cam;
        seed_view = std::move(view);
        break;
      }
    }
    const int action = std::uniform_int_distribution<int>(0, 2)(rng);
    if (action == 0) {
      const double nx = tx + std::cos(tth) * config.forward_step;
      const double ny = ty + std::sin(tth) * config.forward_step;
      if (!collides(world, nx, ny, spawn.radius)) {
        advance(config.forward_step, false);
        traversed.push_back({tx, ty});
      }
    } else {
      turn(action == 1 ? config.turn_step : -config.turn_step, false);
    }
  }
  if (!locked) {
    run.abandoned = true;
    run.abandon_reason = "no confident detection within the exploration budget";
    return run;
  }

  const int target = seed_det.instance;
  run.episode.target_class = seed_det.detection.class_id;
  run.gt.target_instance = target;
  run.gt.target_class = world.primitives[static_cast<std::size_t>(target)].class_id;
  for (std::size_t i = 0; i < world.primitives.size(); ++i) {
    run.gt.boxes.push_back(world.primitive_box(i));
  }

  // The agent re-anchors its odometry at lock-on: reported == true at view 0.
  rx = tx;
  ry = ty;
  rth = tth;

  // In-place look-around: pan the camera through eight headings at three
  // downward pitches so the local map connects the agent's footprint (which
  // sits in the forward camera's near blind spot) to the free space ahead.
  for (int k = 0; k < 8; ++k) {
    const double pan = tth + k * (std::numbers::pi / 4.0);
    for (const double pitch : {1.25, 0.85, 0.45}) {
      const Pose cam = planar_camera_pose(tx, ty, pan, cam_h, pitch);
      observed.push_back(depth_only_frame(render_frame(world, cam, config.intr), cam));
    }
  }

  auto capture = [&](int view_index, const RenderedView& view, const Pose& true_pose,
                     const Pose& reported_pose, const std::vector<MockDetection>& dets) {
    PosedFrame frame = view.frame;
    frame.view_index = view_index;
    frame.pose = reported_pose;
    run.episode.frames.push_back(std::move(frame));
    for (const MockDetection& d : dets) {
      if (d.instance == target) {
        Detection det = d.detection;
        det.view_index = view_index;
        run.episode.detections.push_back(std::move(det));
        break;
      }
    }

    GtView gv;
    gv.view_index = view_index;
    gv.true_pose = true_pose;
    const int w = view.instances.width;
    const int h = view.instances.height;
    std::vector<int> count(world.primitives.size(), 0);
    std::vector<std::array<int, 4>> extent(world.primitives.size(), {w, h, -1, -1});
    gv.target_visible = Mask(w, h, 0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int id = view.instances.at(x, y);
        if (id < 0) continue;
        ++count[id];
        auto& e = extent[id];
        e[0] = std::min(e[0], x);
        e[1] = std::min(e[1], y);
        e[2] = std::max(e[2], x);
        e[3] = std::max(e[3], y);
        if (id == target) gv.target_visible.at(x, y) = 255;
      }
    }
    for (std::size_t i = 0; i < world.primitives.size(); ++i) {
      Mask amodal = amodal_mask(world, i, true_pose, config.intr);
      const int amodal_count = count_nonzero(amodal);
      if (static_cast<int>(i) == target) gv.target_amodal = amodal;
      if (amodal_count == 0 && count[i] == 0) continue;
      GtObjectView obj;
      obj.instance = static_cast<int>(i);
      obj.class_id = world.primitives[i].class_id;
      obj.amodal_bbox = tight_bbox(amodal);
      obj.amodal_pixels = amodal_count;
      obj.visible_pixels = count[i];
      if (count[i] > 0) {
        const auto& e = extent[i];
        obj.visible_bbox = PixelBox{e[0], e[1], e[2] - e[0] + 1, e[3] - e[1] + 1};
      }
      gv.objects.push_back(std::move(obj));
    }
    if (gv.target_amodal.width == 0) gv.target_amodal = Mask(w, h, 0);
    run.gt.views.push_back(std::move(gv));
  };

  {
    std::vector<MockDetection> seed_dets;
    seed_dets.push_back(seed_det);
    capture(0, seed_view, seed_pose, seed_pose, seed_dets);
  }

  const Eigen::Vector2d centroid2 = centroid.head<2>();
  for (int v = 1; v < config.n_views; ++v) {
    OccupancyGrid grid = build_occupancy_grid(observed, config.occupancy);
    const double pad = config.goal_r_max + grid.resolution;
    grid = expand_to_include(grid, {Eigen::Vector2d(tx, ty), centroid2 + Eigen::Vector2d(pad, pad),
                                    centroid2 - Eigen::Vector2d(pad, pad)});
    const Eigen::Vector2i start = grid.cell_of(Eigen::Vector2d(tx, ty));
    grid.at(start.x(), start.y()) = CellState::Free;  // the agent stands here
    // Cells the agent has physically occupied are traversable even when the
    // camera never saw their ground.
    for (const Eigen::Vector2d& p : traversed) {
      const Eigen::Vector2i c = grid.cell_of(p);
      if (grid.in_bounds(c.x(), c.y()) && grid.at(c.x(), c.y()) == CellState::Unknown) {
        grid.at(c.x(), c.y()) = CellState::Free;
      }
    }

    bool reached = false;
    for (int attempt = 0; attempt < config.max_goal_attempts && !reached; ++attempt) {
      try {
        const Eigen::Vector2i goal =
            sample_goal(grid, centroid2, config.goal_r_min, config.goal_r_max, rng());
        const PathPlan plan = plan_path(grid, start, goal);
        for (std::size_t i = 1; i < plan.cells.size(); ++i) {
          const Eigen::Vector2d wp = grid.center_of(plan.cells[i]);
          const double dist = std::hypot(wp.x() - tx, wp.y() - ty);
          if (dist < 1e-12) continue;
          const double dth = wrap_angle(std::atan2(wp.y() - ty, wp.x() - tx) - tth);
          if (std::abs(dth) > 1e-12) turn(dth, true);
          advance(dist, true);
          traversed.push_back({tx, ty});
        }
        reached = true;
      } catch (const std::runtime_error&) {
        continue;  // annulus starved or goal unreachable; resample
      }
    }
    if (!reached) {
      run.abandoned = true;
      run.abandon_reason = "goal sampling or planning failed after " +
                           std::to_string(config.max_goal_attempts) + " attempts";
      return run;
    }

    const double planar_dist = std::hypot(centroid2.x() - tx, centroid2.y() - ty);
    const double face = std::atan2(centroid2.y() - ty, centroid2.x() - tx);
    const double dth = wrap_angle(face - tth);
    if (std::abs(dth) > 1e-12) turn(dth, true);
    const double pitch = std::atan2(cam_h - centroid.z(), planar_dist);
    const Pose true_pose = planar_camera_pose(tx, ty, tth, cam_h, pitch);
    const Pose reported_pose =
        config.noise ? planar_camera_pose(rx, ry, rth, cam_h, pitch) : true_pose;

    RenderedView view = render_frame(world, true_pose, config.intr);
    observed.push_back(depth_only_frame(view, true_pose));
    const std::vector<MockDetection> dets = mock_detect(world, view, config.detector, rng);
    capture(v, view, true_pose, reported_pose, dets);
  }
  return run;
}

// ---------------------------------------------------------------------------
// Ground-truth sidecar I/O.

namespace {

Json bbox_to_json(const PixelBox& b) { return Json::array({b.x, b.y, b.w, b.h}); }

PixelBox bbox_from_json(const Json& j) {
  return PixelBox{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

std::string gt_mask_name(int view_index, const char* kind) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "gt_masks/view_%03d.%s.png", view_index, kind);
  return buf;
}

}  // namespace

std::filesystem::path save_ground_truth(const EpisodeGroundTruth& gt,
                                        const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "gt_masks");
  Json j;
  j["episode_id"] = gt.episode_id;
  j["reference"] = "world";
  j["target_instance"] = gt.target_instance;
  j["target_class"] = gt.target_class;
  j["boxes"] = Json::array();
  for (std::size_t i = 0; i < gt.boxes.size(); ++i) {
    const Box3D& b = gt.boxes[i];
    j["boxes"].push_back({{"instance", static_cast<int>(i)},
                          {"class_id", b.class_id},
                          {"center", vec3_to_json(b.center)},
                          {"dims", vec3_to_json(b.dims)},
                          {"yaw", b.yaw}});
  }
  j["views"] = Json::array();
  for (const GtView& v : gt.views) {
    Json vj;
    vj["view_index"] = v.view_index;
    vj["true_pose"] = v.true_pose.to_row_major();
    vj["objects"] = Json::array();
    for (const GtObjectView& o : v.objects) {
      vj["objects"].push_back({{"instance", o.instance},
                               {"class_id", o.class_id},
                               {"amodal_bbox", bbox_to_json(o.amodal_bbox)},
                               {"visible_bbox", bbox_to_json(o.visible_bbox)},
                               {"amodal_pixels", o.amodal_pixels},
                               {"visible_pixels", o.visible_pixels}});
    }
    const std::string visible_name = gt_mask_name(v.view_index, "visible");
    const std::string amodal_name = gt_mask_name(v.view_index, "amodal");
    write_png_gray8(dir / visible_name, v.target_visible);
    write_png_gray8(dir / amodal_name, v.target_amodal);
    vj["target_visible_mask"] = visible_name;
    vj["target_amodal_mask"] = amodal_name;
    j["views"].push_back(std::move(vj));
  }
  const std::filesystem::path path = dir / "ground_truth.json";
  write_json_atomic(path, j);
  return path;
}

EpisodeGroundTruth load_ground_truth(const std::filesystem::path& manifest_path) {
  std::filesystem::path path = manifest_path;
  if (std::filesystem::is_directory(path)) path /= "ground_truth.json";
  const std::filesystem::path base = path.parent_path();
  EpisodeGroundTruth gt;
  try {
    const Json j = read_json_file(path);
    gt.episode_id = j.at("episode_id").get<std::string>();
    gt.target_instance = j.at("target_instance").get<int>();
    gt.target_class = j.at("target_class").get<int>();
    for (const Json& bj : j.at("boxes")) {
      if (bj.at("instance").get<int>() != static_cast<int>(gt.boxes.size())) {
        throw ManifestError("ground truth: boxes must be listed in instance order");
      }
      Box3D b;
      b.class_id = bj.at("class_id").get<int>();
      b.center = vec3_from_json(bj.at("center"));
      b.dims = vec3_from_json(bj.at("dims"));
      b.yaw = bj.at("yaw").get<double>();
      gt.boxes.push_back(b);
    }
    for (const Json& vj : j.at("views")) {
      GtView v;
      v.view_index = vj.at("view_index").get<int>();
      std::array<double, 16> m{};
      const Json& pj = vj.at("true_pose");
      for (std::size_t i = 0; i < 16; ++i) m[i] = pj.at(i).get<double>();
      v.true_pose = Pose::from_row_major(m);
      for (const Json& oj : vj.at("objects")) {
        GtObjectView o;
        o.instance = oj.at("instance").get<int>();
        o.class_id = oj.at("class_id").get<int>();
        o.amodal_bbox = bbox_from_json(oj.at("amodal_bbox"));
        o.visible_bbox = bbox_from_json(oj.at("visible_bbox"));
        o.amodal_pixels = oj.at("amodal_pixels").get<int>();
        o.visible_pixels = oj.at("visible_pixels").get<int>();
        v.objects.push_back(o);
      }
      v.target_visible = read_png_gray8(base / vj.at("target_visible_mask").get<std::string>());
      v.target_amodal = read_png_gray8(base / vj.at("target_amodal_mask").get<std::string>());
      gt.views.push_back(std::move(v));
    }
  } catch (const ManifestError&) {
    throw;
  } catch (const std::exception& e) {
    throw ManifestError(std::string("ground truth ") + path.string() + ": " + e.what());
  }
  return gt;
}

}  // namespace mvseg
