#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvseg/egomotion.hpp"
#include "mvseg/evalkit.hpp"
#include "mvseg/explore.hpp"
#include "mvseg/jsonio.hpp"
#include "mvseg/labelgen.hpp"

// Corpus-level drivers shared by the command-line tool, the Python bindings,
// and the acceptance harness: world generation, episode simulation,
// pseudo-label generation, pose refinement, and evaluation against the
// simulator's ground-truth sidecars.

namespace mvseg {

// ---------------------------------------------------------------------------
// Synthetic world generation.

struct WorldGenConfig {
  double half_extent = 6.0;    // world bounds are [-half_extent, half_extent]^2
  int n_objects = 4;           // class-labeled boxes / spheres
  int n_occluders = 3;         // slab-shaped obstacles placed near the objects
  double min_separation = 0.4; // clearance between primitive footprints
};

// Deterministic scene generator: scattered boxes and spheres drawn from a
// small category table, plus occluder slabs placed 1.2-1.8 m from a random
// object so that some viewpoints of it are partially blocked. The seed is
// recorded in world.rng_seed. Placement uses rejection sampling; primitives
// that cannot be placed without overlap are dropped, so the world may hold
// fewer primitives than requested.
SynthWorld make_random_world(std::uint64_t seed, const WorldGenConfig& config = {});

// ---------------------------------------------------------------------------
// Simulation driver.

struct SimulateOptions {
  int episodes = 30;
  std::uint64_t seed = 0;
  int jobs = 1;
  // Per-episode template; episode_id and rng_seed are overwritten per episode,
  // spawn poses are sampled from `seed`.
  PolicyConfig policy;
};

struct EpisodeOutcome {
  std::string episode_id;
  std::filesystem::path dir;  // episode directory; empty when abandoned
  bool abandoned = false;
  std::string reason;
  int views = 0;
  int explore_steps = 0;
};

// Runs `episodes` spawns of run_episode in `world`, writing one
// episode_###/ directory (manifest + frames + ground-truth sidecar) per
// successful episode, plus world.json and corpus.json under out_dir.
// Per-episode seeds and spawns derive only from options.seed and the episode
// index, so results are identical at any job count. Abandoned episodes are
// recorded in corpus.json but produce no directory.
std::vector<EpisodeOutcome> simulate_corpus(const SynthWorld& world,
                                            const SimulateOptions& options,
                                            const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Label-generation driver.

struct GenerateOptions {
  // 0 = use every view; otherwise keep the reference view plus views-1 others
  // sampled without replacement (seeded by `seed` and the episode id).
  int views = 0;
  bool weak_seed = false;     // seed from the sidecar's reference-view GT mask
  bool filter_poses = false;  // drop views failing the cycle-consistency check
  bool refine_poses = false;  // rebuild poses from refined pair transforms
  std::uint64_t seed = 0;
  int jobs = 1;
  SegmentConfig segment;      // segment.vote_aggregation = multi-view voting
  // A few reprojected pixels at a frame edge make a useless training box, so
  // such views are exported as empty rather than as labels.
  LabelGenConfig labels{.close_radius = 3, .min_pixels = 12};
  CycleFilterParams filter;
};

// Segmentation defaults sized for the simulator corpus (64x48 frames):
// shallow seed-mask morphology, 5 cm voxels, and a 1.2 m ball crop that keeps
// the exact O(N^2) CRF fast.
SegmentConfig corpus_segment_defaults();

struct GenerateOutcome {
  std::string episode_id;
  bool ok = false;
  std::string error;
  int views_used = 0;
  int retained_views = 0;  // after pose filtering; == views_used when off
};

struct GenerateSummary {
  std::vector<GenerateOutcome> outcomes;
  std::filesystem::path labels_dir;    // labels_2d.json + labels_3d.json
  std::filesystem::path detector_dir;  // detector baseline in the same schema
  int succeeded = 0;
};

// Scans data_dir for episode manifests (any <dir>/episode_*/manifest.json, or
// data_dir itself when it holds manifest.json), generates pseudo-labels per
// episode, and writes the combined export to out_dir plus the raw detector
// detections (real confidences, visible-extent boxes) to
// out_dir/detector_baseline as a comparison baseline. Episode failures are
// recorded and skipped; an exception is thrown only when no episode succeeds.
GenerateSummary generate_labels(const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_dir,
                                const GenerateOptions& options);

// ---------------------------------------------------------------------------
// Pose-refinement driver.

struct RefineOutcome {
  std::string episode_id;
  bool ok = false;
  std::string error;
  int pairs_passed = 0;
  int views_retained = 0;
};

// Loads every episode under data_dir, scores consecutive-pair cycle
// consistency, rebuilds the pose chain from the refined transforms, and
// writes the resulting episodes (plus copies of their ground-truth sidecars)
// under out_dir. The refined manifests keep every frame; consumers that want
// the view subset apply the filter themselves.
std::vector<RefineOutcome> refine_corpus(const std::filesystem::path& data_dir,
                                         const std::filesystem::path& out_dir,
                                         const CycleFilterParams& params = {}, int jobs = 1);

// ---------------------------------------------------------------------------
// Evaluation driver.

struct EvalOptions {
  double iou2d = 0.5;
  double iou3d = 0.25;
  bool bev_only = false;        // 3-D matching on footprints instead of volumes
  double conf_threshold = 0.0;  // micro precision/recall operating point
  std::vector<double> sweep;    // confidence thresholds; empty = no sweep
};

struct EvalReport {
  EvalRecord map2d;
  bool has_3d = false;
  EvalRecord map3d;
  std::vector<SweepRow> sweep;
  int images = 0;
  int predictions = 0;
  int truths = 0;

  Json to_json() const;
  std::string table() const;  // human-readable summary
};

// Evaluates a label export (labels_2d.json [+ labels_3d.json]) against the
// ground-truth sidecars found under gt_dir. 2-D truths are the target
// instance's amodal boxes on exactly the views listed in the export (views
// where the target has no in-frame pixels contribute nothing); 3-D truths are
// the target boxes of the exported episodes. Annotations flagged empty count
// as no prediction.
EvalReport evaluate_labels(const std::filesystem::path& labels_dir,
                           const std::filesystem::path& gt_dir,
                           const EvalOptions& options = {});

// ---------------------------------------------------------------------------
// Shared helpers (exposed for tests and the CLI).

// Episode manifests under root, sorted by path: root/manifest.json if present,
// else every root/*/manifest.json.
std::vector<std::filesystem::path> find_episode_manifests(const std::filesystem::path& root);

// Ground-truth sidecars under root, sorted by path (same layout rule).
std::vector<std::filesystem::path> find_ground_truth_files(const std::filesystem::path& root);

// The episode restricted to frame positions `keep` (ascending); detections on
// dropped views are removed, view indices and the reference marker are kept.
Episode subset_episode(const Episode& episode, const std::vector<int>& keep);

// The detection the label generator seeds segmentation from. The episode's
// class is decided by a confidence-weighted vote over all detections; among
// detections of that class at or above min_confidence the pick favors boxes
// sitting fully inside the frame at no more than half its area (the seed view
// must show background around the object), then confidence, then mask size,
// then the earliest view. Throws std::runtime_error when there are no
// detections.
Detection choose_seed(const Episode& episode, double min_confidence = 0.9);

}  // namespace mvseg
