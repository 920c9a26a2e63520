#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvseg/egomotion.hpp"
#include "mvseg/geometry.hpp"
#include "mvseg/image.hpp"
#include "mvseg/ingest.hpp"
#include "mvseg/jsonio.hpp"
#include "mvseg/labelgen.hpp"

// Synthetic embodied data collection: primitive-scene ray casting, a mock
// object detector with occlusion-dependent confidence, top-down occupancy
// mapping, annulus goal sampling, fast-marching path planning, and the
// scripted collect loop that assembles them into Episodes plus ground-truth
// sidecars.
//
// Conventions: the world frame is z-up with the ground plane at z = 0 and is
// used as the episode reference frame, so frame poses map world -> camera.
// Cameras are y-down/z-forward pinholes. The agent is planar: position (x, y),
// heading about +z, camera at a fixed height.

namespace mvseg {

struct Category {
  int id = -1;
  std::string name;
};

// A solid placed on or above the ground. Boxes rotate about world z only;
// spheres ignore yaw. `dims` are full extents (width, depth, height); for a
// sphere all three equal the diameter.
struct Primitive {
  std::string shape = "box";  // "box" | "sphere"
  int class_id = -1;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double yaw = 0.0;
  Eigen::Vector3d dims = Eigen::Vector3d::Ones();
  Rgb8 color;

  double radius() const { return 0.5 * dims.x(); }  // spheres only
};

struct WorldBounds {
  Eigen::Vector2d min = Eigen::Vector2d(-5.0, -5.0);
  Eigen::Vector2d max = Eigen::Vector2d(5.0, 5.0);
};

// An analytic scene: an infinite ground plane at z = 0 plus flat-shaded
// primitives inside an axis-aligned (x, y) region. Depth readings beyond
// max_depth are reported invalid (0) while color still shows the surface.
struct SynthWorld {
  WorldBounds bounds;
  std::vector<Primitive> primitives;
  std::vector<Category> categories;
  std::uint64_t rng_seed = 0;  // seed used to generate this world, if any
  double max_depth = 20.0;
  Rgb8 ground_color{120, 120, 120};
  Rgb8 sky_color{200, 220, 235};

  // Throws std::invalid_argument: empty/duplicate categories, unknown shapes,
  // non-positive dims, class ids missing from the category table, or a
  // primitive footprint outside the bounds.
  void validate() const;

  // Tight gravity-aligned 3-D box of a primitive (spheres get their bounding
  // cube with yaw 0); class_id is copied from the primitive.
  Box3D primitive_box(std::size_t index) const;

  static SynthWorld from_json(const Json& j);
  Json to_json() const;
};

SynthWorld load_world(const std::filesystem::path& path);
void save_world(const SynthWorld& world, const std::filesystem::path& path);

// Camera pose (world -> camera) looking from `eye` toward `target` with image
// y pointing down in the world. When the view direction is vertical the
// camera right axis falls back to world -y (the heading-zero convention).
Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target);

// Camera of a planar agent at (x, y, height) with the given heading, pitched
// down by `pitch_down` radians (0 = level).
Pose planar_camera_pose(double x, double y, double heading, double height, double pitch_down = 0.0);

constexpr int kInstanceGround = -1;
constexpr int kInstanceNone = -2;

struct RenderedView {
  PosedFrame frame;                 // rgb + depth + intr + pose; view_index = -1
  Image<std::int32_t> instances;    // primitive index, kInstanceGround, or kInstanceNone
};

// Analytic ray cast of every pixel: nearest hit among the ground plane and
// all primitives, exact camera-z depth, flat per-surface color.
RenderedView render_frame(const SynthWorld& world, const Pose& ref_to_cam, const Intrinsics& intr);

// Pixels the primitive would cover if nothing else existed (occluders and the
// depth range ignored). Visibility fractions are measured against this.
Mask amodal_mask(const SynthWorld& world, std::size_t primitive_index, const Pose& ref_to_cam,
                 const Intrinsics& intr);

struct MockDetectorModel {
  double base_conf = 0.95;
  double occlusion_exponent = 2.0;
  double misclass_rate = 0.0;
  std::uint64_t rng_seed = 0;
};

struct MockDetection {
  Detection detection;
  int instance = -1;             // primitive index behind the detection
  double visible_fraction = 0.0;  // visible pixels / in-frame amodal pixels
};

// Emits one detection per primitive with at least one visible pixel, ordered
// by primitive index. Confidence = base_conf * visible_fraction ^
// occlusion_exponent; with probability misclass_rate the class id is replaced
// by a different category (or class_id + 1 when no other exists); the mask is
// the visible mask eroded by a random 0-2 px radius (falling back to the
// uneroded mask when erosion would empty it).
std::vector<MockDetection> mock_detect(const SynthWorld& world, const RenderedView& view,
                                       const MockDetectorModel& model, std::mt19937_64& rng);
// Convenience overload seeding a fresh generator from model.rng_seed.
std::vector<MockDetection> mock_detect(const SynthWorld& world, const RenderedView& view,
                                       const MockDetectorModel& model);

enum class CellState : std::uint8_t { Unknown = 0, Free = 1, Occupied = 2 };

// Top-down planning grid. Cell (ix, iy) covers the world square
// [origin + ix*res, origin + (ix+1)*res) x [origin + iy*res, ...); the origin
// is snapped to resolution multiples so cell boundaries are absolute.
struct OccupancyGrid {
  double resolution = 0.1;
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  int width = 0;
  int height = 0;
  std::vector<CellState> cells;

  bool in_bounds(int ix, int iy) const { return ix >= 0 && ix < width && iy >= 0 && iy < height; }
  CellState at(int ix, int iy) const { return cells[static_cast<std::size_t>(iy) * width + ix]; }
  CellState& at(int ix, int iy) { return cells[static_cast<std::size_t>(iy) * width + ix]; }
  Eigen::Vector2i cell_of(const Eigen::Vector2d& p) const;
  Eigen::Vector2d center_of(const Eigen::Vector2i& cell) const;
  std::size_t count(CellState state) const;
};

struct OccupancyParams {
  double resolution = 0.1;
  double band_min = 0.08;  // agent-height band (meters above ground)
  double band_max = 1.5;
  double ground_tol = 0.04;  // |z| <= ground_tol counts as traversable ground
};

// Unprojects every frame and classifies cells: any point in the agent-height
// band marks its cell occupied (occupied evidence always wins, so adding
// frames never flips occupied -> free), ground points mark free, everything
// unobserved stays unknown. The result is independent of frame order.
OccupancyGrid build_occupancy_grid(const std::vector<PosedFrame>& frames,
                                   const OccupancyParams& params);
OccupancyGrid build_occupancy_grid(const std::vector<PosedFrame>& frames, double resolution);

// Copy of `grid` whose extents additionally cover `points`; new cells are
// unknown. Useful before planning from a pose outside the observed region.
OccupancyGrid expand_to_include(const OccupancyGrid& grid,
                                const std::vector<Eigen::Vector2d>& points);

// Uniform draw over the free cells whose center lies within [r_min, r_max] of
// `centroid`: candidate cells are enumerated exactly, then rejection-sampled
// for freeness. Throws std::invalid_argument when r_min >= r_max and
// std::runtime_error when the annulus has no cells or no free cell is found
// within 1000 trials.
Eigen::Vector2i sample_goal(const OccupancyGrid& grid, const Eigen::Vector2d& centroid,
                            double r_min, double r_max, std::uint64_t seed);

struct PathPlan {
  std::vector<Eigen::Vector2i> cells;  // start .. goal inclusive, all free
  double arrival_time = 0.0;           // eikonal distance at start, meters
};

// Fast-marching eikonal solve (unit speed on free cells, impassable
// otherwise) from the goal on an 8-neighborhood first-order upwind stencil,
// followed by a strict descent of the arrival-time field. Throws
// std::invalid_argument when start/goal are outside the grid or not free and
// std::runtime_error("goal unreachable...") when no free path exists.
PathPlan plan_path(const OccupancyGrid& grid, const Eigen::Vector2i& start,
                   const Eigen::Vector2i& goal);

// Sum of per-step distances (resolution or sqrt(2) * resolution).
double path_length(const std::vector<Eigen::Vector2i>& cells, double resolution);

struct AgentState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double heading = 0.0;        // radians about world +z
  double camera_height = 0.6;  // meters
  double radius = 0.15;        // collision footprint, meters
};

struct PolicyConfig {
  double conf_threshold = 0.9;  // detection confidence that starts a capture
  int n_views = 25;             // total captured views including the seed view
  double goal_r_min = 0.5;      // capture annulus around the object centroid
  double goal_r_max = 3.0;
  std::optional<ActionNoiseModel> noise;  // odometry noise on reported poses
  std::uint64_t rng_seed = 0;
  MockDetectorModel detector;
  Intrinsics intr{60.0, 60.0, 31.5, 23.5, 64, 48};
  OccupancyParams occupancy;
  int max_explore_steps = 400;  // render+detect budget before abandoning
  int max_goal_attempts = 20;   // sample_goal/plan_path retries per view
  double forward_step = 0.25;   // exploration step, also the nominal odometry
  double turn_step = 10.0 * 3.14159265358979323846 / 180.0;  // translation / turn
  std::string episode_id = "episode_000";
  std::string environment_id = "synth";
};

struct GtObjectView {
  int instance = -1;
  int class_id = -1;
  PixelBox amodal_bbox;   // in-frame extent ignoring occluders
  PixelBox visible_bbox;  // extent actually visible
  int amodal_pixels = 0;
  int visible_pixels = 0;
};

struct GtView {
  int view_index = -1;
  Pose true_pose;  // world -> camera, noise-free
  std::vector<GtObjectView> objects;
  Mask target_visible;  // target instance, visible pixels
  Mask target_amodal;   // target instance, occluders ignored
};

// Evaluation-only side channel written next to an episode: true poses, true
// target masks, and true gravity-aligned 3-D boxes in the world frame.
struct EpisodeGroundTruth {
  std::string episode_id;
  int target_instance = -1;
  int target_class = -1;  // true class of the target primitive
  std::vector<Box3D> boxes;            // one per primitive, index-aligned
  std::vector<GtView> views;

  const Box3D& target_box() const { return boxes.at(static_cast<std::size_t>(target_instance)); }
};

std::filesystem::path save_ground_truth(const EpisodeGroundTruth& gt,
                                        const std::filesystem::path& dir);
EpisodeGroundTruth load_ground_truth(const std::filesystem::path& manifest_path);

struct EpisodeRun {
  Episode episode;  // reported poses; detections of the locked-on instance
  EpisodeGroundTruth gt;
  bool abandoned = false;
  std::string abandon_reason;
  int explore_steps = 0;  // render+detect rounds spent before lock-on
};

// Scripted collection loop. The agent random-walks (uniform over forward /
// turn-left / turn-right, forward vetoed on collision or leaving bounds)
// until some detection reaches conf_threshold; that render becomes view 0 and
// its instance the episode target. After locking on it pans the camera
// through a full look-around at downward pitches, seeding the local map with
// the ground near its feet (the level forward camera cannot see it). It then
// repeats n_views - 1 times: build the occupancy grid from everything
// observed so far (cells the agent has physically stood on count as free),
// sample a goal in the annulus around the target centroid, fast-march to it,
// walk the path, aim the camera at the centroid, render + detect + record.
//
// Simulation is exact: the agent executes commands perfectly and maps with
// true poses. When `noise` is set, each walk segment and aiming turn also
// produces an odometry reading corrupted by a model sample (scaled linearly
// by command magnitude relative to forward_step / turn_step), and the episode
// stores poses integrated from those readings; the true poses go to the
// ground-truth sidecar. Reported and true poses coincide at view 0 (the agent
// re-anchors its odometry when it locks onto a target) and are identical
// everywhere when noise is disabled.
EpisodeRun run_episode(const SynthWorld& world, const AgentState& spawn,
                       const PolicyConfig& config);

// True when a disc of `radius` at (x, y) stays inside the world bounds and
// overlaps no primitive footprint — the spawn/step validity test the episode
// loop itself uses.
bool planar_clear(const SynthWorld& world, double x, double y, double radius);

}  // namespace mvseg
