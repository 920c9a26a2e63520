#include "mvseg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>
#include <unordered_map>

#include "mvseg/ingest.hpp"
#include "mvseg/segment3d.hpp"

namespace mvseg {
namespace {

namespace fs = std::filesystem;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string index_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%03d", prefix, i);
  return buf;
}

// Runs fn(0..n-1) on up to `jobs` threads. Work items must handle their own
// errors; an exception escaping fn aborts the batch once all threads join.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

Json vec3_json(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from_json(const Json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

Json record_json(const EvalRecord& r) {
  Json per_class = Json::array();
  for (const ClassResult& c : r.per_class) {
    per_class.push_back({{"class_id", c.class_id}, {"ap", c.ap}, {"gt_count", c.gt_count}});
  }
  Json j;
  j["iou_threshold"] = r.iou_threshold;
  j["conf_threshold"] = r.conf_threshold;
  j["defined"] = r.defined;
  j["map"] = r.map;
  j["per_class"] = std::move(per_class);
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  if (r.precision_defined) j["precision"] = r.precision;
  j["recall"] = r.recall;
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// World generation.

SynthWorld make_random_world(std::uint64_t seed, const WorldGenConfig& config) {
  if (config.half_extent <= 1.0) throw std::invalid_argument("world half_extent must exceed 1 m");
  if (config.n_objects < 1) throw std::invalid_argument("world needs at least one object");

  SynthWorld world;
  world.rng_seed = seed;
  world.bounds.min = {-config.half_extent, -config.half_extent};
  world.bounds.max = {config.half_extent, config.half_extent};
  world.categories = {{1, "carton"}, {2, "crate"}, {3, "drum"}, {4, "ball"}, {9, "panel"}};

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  struct Footprint {
    Eigen::Vector2d center;
    double radius;
  };
  std::vector<Footprint> placed;
  const double margin = 0.2;
  auto clear_at = [&](const Eigen::Vector2d& p, double r) {
    if (p.x() - r < world.bounds.min.x() + margin || p.x() + r > world.bounds.max.x() - margin ||
        p.y() - r < world.bounds.min.y() + margin || p.y() + r > world.bounds.max.y() - margin) {
      return false;
    }
    for (const Footprint& f : placed) {
      if ((p - f.center).norm() < r + f.radius + config.min_separation) return false;
    }
    return true;
  };
  // Channels avoid the band around the ground gray (120), and every pair of
  // primitives keeps its colors apart: these shapes are textureless, so color
  // is the only appearance cue, and two look-alike primitives near each other
  // are genuinely inseparable.
  std::vector<Rgb8> used_colors;
  auto random_color = [&] {
    auto channel = [&] {
      const double u = unit(rng);
      return static_cast<std::uint8_t>(u < 0.5 ? 40.0 + 110.0 * u : 150.0 + 130.0 * (u - 0.5));
    };
    auto far_from = [](const Rgb8& a, const Rgb8& b) {
      const double dr = (a.r - b.r) / 255.0, dg = (a.g - b.g) / 255.0, db = (a.b - b.b) / 255.0;
      return dr * dr + dg * dg + db * db >= 0.3 * 0.3;
    };
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const Rgb8 c{channel(), channel(), channel()};
      bool ok = true;
      for (const Rgb8& u : used_colors) ok = ok && far_from(c, u);
      if (ok) {
        used_colors.push_back(c);
        return c;
      }
    }
    throw std::runtime_error("could not sample a separable primitive color");
  };

  std::vector<std::size_t> object_indices;
  for (int i = 0; i < config.n_objects; ++i) {
    Primitive p;
    p.color = random_color();
    if (unit(rng) < 0.25) {
      const double diameter = uniform(0.5, 0.75);
      p.shape = "sphere";
      p.class_id = 4;
      p.dims = Eigen::Vector3d::Constant(diameter);
      p.center.z() = 0.5 * diameter;
    } else {
      p.shape = "box";
      p.class_id = 1 + static_cast<int>(unit(rng) * 3.0);
      p.class_id = std::min(p.class_id, 3);
      p.dims = {uniform(0.5, 0.8), uniform(0.5, 0.8), uniform(0.55, 0.9)};
      p.yaw = uniform(-std::numbers::pi / 2.0, std::numbers::pi / 2.0);
      p.center.z() = 0.5 * p.dims.z();
    }
    const double radius =
        p.shape == "sphere" ? p.radius() : 0.5 * std::hypot(p.dims.x(), p.dims.y());
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const Eigen::Vector2d c{uniform(world.bounds.min.x(), world.bounds.max.x()),
                              uniform(world.bounds.min.y(), world.bounds.max.y())};
      if (!clear_at(c, radius)) continue;
      p.center.x() = c.x();
      p.center.y() = c.y();
      placed.push_back({c, radius});
      object_indices.push_back(world.primitives.size());
      world.primitives.push_back(p);
      ok = true;
    }
  }

  for (int i = 0; i < config.n_occluders && !object_indices.empty(); ++i) {
    const std::size_t target =
        object_indices[std::min(object_indices.size() - 1,
                                static_cast<std::size_t>(unit(rng) * object_indices.size()))];
    const Eigen::Vector2d anchor = world.primitives[target].center.head<2>();
    Primitive p;
    p.shape = "box";
    p.class_id = 9;
    p.dims = {uniform(0.9, 1.4), 0.15, uniform(0.7, 1.0)};
    p.center.z() = 0.5 * p.dims.z();
    p.color = random_color();
    const double radius = 0.5 * std::hypot(p.dims.x(), p.dims.y());
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const double angle = uniform(0.0, 2.0 * std::numbers::pi);
      const double dist = uniform(1.2, 1.8);
      const Eigen::Vector2d c = anchor + dist * Eigen::Vector2d{std::cos(angle), std::sin(angle)};
      if (!clear_at(c, radius)) continue;
      p.center.x() = c.x();
      p.center.y() = c.y();
      // Tangential to the anchor direction, so the panel blocks a viewing arc.
      double yaw = angle + std::numbers::pi / 2.0 + uniform(-0.3, 0.3);
      while (yaw > std::numbers::pi / 2.0) yaw -= std::numbers::pi;
      while (yaw <= -std::numbers::pi / 2.0) yaw += std::numbers::pi;
      p.yaw = yaw;
      placed.push_back({c, radius});
      world.primitives.push_back(p);
      ok = true;
    }
  }

  if (world.primitives.empty()) throw std::runtime_error("world generation placed no primitives");
  world.validate();
  return world;
}

// ---------------------------------------------------------------------------
// Simulation.

std::vector<EpisodeOutcome> simulate_corpus(const SynthWorld& world,
                                            const SimulateOptions& options,
                                            const std::filesystem::path& out_dir) {
  if (options.episodes < 1) throw std::invalid_argument("episode count must be positive");
  if (options.jobs < 1) throw std::invalid_argument("job count must be positive");
  world.validate();
  fs::create_directories(out_dir);
  save_world(world, out_dir / "world.json");

  // All randomness is drawn sequentially up front so the job count cannot
  // change which episode sees which values.
  std::mt19937_64 master(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  struct EpisodeDraw {
    std::uint64_t seed = 0;
    AgentState spawn;
    bool spawn_found = false;
  };
  std::vector<EpisodeDraw> draws(static_cast<std::size_t>(options.episodes));
  for (EpisodeDraw& d : draws) {
    d.seed = master();
    for (int attempt = 0; attempt < 1000 && !d.spawn_found; ++attempt) {
      const double pad = d.spawn.radius + 0.05;
      const double x =
          world.bounds.min.x() + pad + (world.bounds.max.x() - world.bounds.min.x() - 2 * pad) * unit(master);
      const double y =
          world.bounds.min.y() + pad + (world.bounds.max.y() - world.bounds.min.y() - 2 * pad) * unit(master);
      const double heading = -std::numbers::pi + 2.0 * std::numbers::pi * unit(master);
      if (!planar_clear(world, x, y, d.spawn.radius)) continue;
      d.spawn.position = {x, y};
      d.spawn.heading = heading;
      d.spawn_found = true;
    }
  }

  std::vector<EpisodeOutcome> outcomes(static_cast<std::size_t>(options.episodes));
  parallel_for(options.episodes, options.jobs, [&](int i) {
    EpisodeOutcome& out = outcomes[static_cast<std::size_t>(i)];
    out.episode_id = index_name("episode_", i);
    const EpisodeDraw& draw = draws[static_cast<std::size_t>(i)];
    if (!draw.spawn_found) {
      out.abandoned = true;
      out.reason = "no collision-free spawn found";
      return;
    }
    PolicyConfig cfg = options.policy;
    cfg.episode_id = out.episode_id;
    cfg.rng_seed = draw.seed;
    try {
      const EpisodeRun run = run_episode(world, draw.spawn, cfg);
      out.explore_steps = run.explore_steps;
      if (run.abandoned) {
        out.abandoned = true;
        out.reason = run.abandon_reason;
        return;
      }
      out.views = static_cast<int>(run.episode.frames.size());
      const fs::path dir = out_dir / out.episode_id;
      save_episode(run.episode, dir);
      save_ground_truth(run.gt, dir);
      out.dir = dir;
    } catch (const std::exception& e) {
      out.abandoned = true;
      out.reason = e.what();
    }
  });

  Json j;
  j["world"] = "world.json";
  j["seed"] = options.seed;
  j["episodes"] = Json::array();
  int succeeded = 0;
  for (const EpisodeOutcome& out : outcomes) {
    succeeded += out.abandoned ? 0 : 1;
    j["episodes"].push_back({{"episode_id", out.episode_id},
                             {"abandoned", out.abandoned},
                             {"reason", out.reason},
                             {"views", out.views},
                             {"explore_steps", out.explore_steps}});
  }
  j["succeeded"] = succeeded;
  write_json_atomic(out_dir / "corpus.json", j);
  return outcomes;
}

// ---------------------------------------------------------------------------
// Shared helpers.

std::vector<std::filesystem::path> find_episode_manifests(const std::filesystem::path& root) {
  if (!fs::exists(root)) throw ManifestError("no such directory: " + root.string());
  if (fs::exists(root / "manifest.json")) return {root / "manifest.json"};
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) {
      out.push_back(entry.path() / "manifest.json");
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::filesystem::path> find_ground_truth_files(const std::filesystem::path& root) {
  if (!fs::exists(root)) throw ManifestError("no such directory: " + root.string());
  if (fs::exists(root / "ground_truth.json")) return {root / "ground_truth.json"};
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "ground_truth.json")) {
      out.push_back(entry.path() / "ground_truth.json");
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Episode subset_episode(const Episode& episode, const std::vector<int>& keep) {
  Episode out;
  out.episode_id = episode.episode_id;
  out.environment_id = episode.environment_id;
  out.target_class = episode.target_class;
  out.reference_view = episode.reference_view;
  std::set<int> kept_views;
  int prev = -1;
  for (const int pos : keep) {
    if (pos <= prev) throw std::invalid_argument("kept frame positions must be strictly ascending");
    if (pos < 0 || pos >= static_cast<int>(episode.frames.size())) {
      throw std::invalid_argument("kept frame position out of range");
    }
    prev = pos;
    const PosedFrame& frame = episode.frames[static_cast<std::size_t>(pos)];
    kept_views.insert(frame.view_index);
    out.frames.push_back(frame);
  }
  for (const Detection& det : episode.detections) {
    if (kept_views.count(det.view_index)) out.detections.push_back(det);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label generation.

Detection choose_seed(const Episode& episode, double min_confidence) {
  if (episode.detections.empty()) {
    throw std::runtime_error("episode has no detections to seed from");
  }
  // The views all watch one object, so its class is decided by a
  // confidence-weighted vote; a single misclassified view then cannot
  // mislabel the whole episode.
  std::map<int, double> class_votes;
  for (const Detection& d : episode.detections) class_votes[d.class_id] += d.confidence;
  int voted_class = episode.detections.front().class_id;
  for (const auto& [cls, votes] : class_votes) {
    if (votes > class_votes.at(voted_class)) voted_class = cls;
  }

  // Every detection at or above min_confidence is trustworthy, so framing
  // matters more than the exact confidence: the seed view must show
  // background around the object (a box hugging the frame edge or covering
  // most of the image trains a useless appearance model). Rank eligible
  // detections by framing, then confidence, then mask size (it survives
  // erosion best), then the earliest view. When nothing reaches
  // min_confidence the most confident detection is still returned; callers
  // enforcing the threshold will reject it downstream.
  const Detection* best = nullptr;
  bool best_eligible = false, best_framed = false;
  int best_px = -1;
  for (const Detection& d : episode.detections) {
    if (d.class_id != voted_class) continue;
    const PosedFrame* f = episode.frame_by_view(d.view_index);
    if (!f) throw std::invalid_argument("detection names unknown view " +
                                        std::to_string(d.view_index));
    const bool eligible = d.confidence >= min_confidence;
    const bool framed = d.bbox.x > 0 && d.bbox.y > 0 && d.bbox.x + d.bbox.w < f->intr.width &&
                        d.bbox.y + d.bbox.h < f->intr.height &&
                        2 * d.bbox.w * d.bbox.h <= f->intr.width * f->intr.height;
    const int px = count_nonzero(d.mask);
    const auto rank = std::make_tuple(eligible, eligible && framed, d.confidence, px,
                                      -d.view_index);
    if (!best || rank > std::make_tuple(best_eligible, best_eligible && best_framed,
                                        best->confidence, best_px, -best->view_index)) {
      best = &d;
      best_eligible = eligible;
      best_framed = framed;
      best_px = px;
    }
  }
  if (!best) throw std::runtime_error("episode has no detections to seed from");
  return *best;
}

SegmentConfig corpus_segment_defaults() {
  SegmentConfig config;
  config.partition.erode_radius = 2;
  config.partition.dilate_radius = 1;
  config.partition.voxel_size = 0.05;
  config.partition.crop_radius = 1.2;
  config.partition.stride = 1;
  // Background is only clamped in the seed view, so ground occluded there
  // never gets a clamp. A wider appearance-kernel reach lets those clamps
  // pull on same-colored ground across the whole crop ball instead of only
  // a 0.2 m neighborhood.
  config.crf.theta_alpha = 0.8;
  config.vote_aggregation = true;
  return config;
}

namespace {

struct BaselineImage {
  int view_index = -1;
  int width = 0;
  int height = 0;
};

struct BaselineAnnotation {
  int view_index = -1;
  int class_id = -1;
  double confidence = 0.0;
  PixelBox bbox;
  int area = 0;
};

struct EpisodeWork {
  GenerateOutcome outcome;
  std::optional<PseudoLabelSet> labels;
  std::vector<BaselineImage> images;
  std::vector<BaselineAnnotation> annotations;
};

std::string view_file_name(const std::string& episode_id, int view_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%03d.rgb.png", view_index);
  return episode_id + "/frames/" + buf;
}

void write_detector_baseline(const std::vector<EpisodeWork>& work, const fs::path& dir) {
  fs::create_directories(dir);
  std::set<int> class_ids;
  for (const EpisodeWork& w : work) {
    if (!w.outcome.ok) continue;
    for (const BaselineAnnotation& a : w.annotations) class_ids.insert(a.class_id);
  }
  Json j;
  j["categories"] = Json::array();
  for (const int id : class_ids) {
    j["categories"].push_back({{"id", id}, {"name", "class_" + std::to_string(id)}});
  }
  j["images"] = Json::array();
  j["annotations"] = Json::array();
  int image_id = 0;
  int ann_id = 0;
  for (const EpisodeWork& w : work) {
    if (!w.outcome.ok) continue;
    std::unordered_map<int, int> image_of_view;
    for (const BaselineImage& im : w.images) {
      image_of_view[im.view_index] = image_id;
      j["images"].push_back({{"id", image_id},
                             {"file_name", view_file_name(w.outcome.episode_id, im.view_index)},
                             {"episode_id", w.outcome.episode_id},
                             {"view_index", im.view_index},
                             {"width", im.width},
                             {"height", im.height}});
      ++image_id;
    }
    for (const BaselineAnnotation& a : w.annotations) {
      j["annotations"].push_back({{"id", ann_id},
                                  {"image_id", image_of_view.at(a.view_index)},
                                  {"category_id", a.class_id},
                                  {"segmentation", Json::array()},
                                  {"bbox", Json::array({a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h})},
                                  {"area", a.area},
                                  {"iscrowd", 0},
                                  {"score", a.confidence},
                                  {"provenance", "detector"},
                                  {"empty", false}});
      ++ann_id;
    }
  }
  write_json_atomic(dir / "labels_2d.json", j);
}

}  // namespace

GenerateSummary generate_labels(const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_dir,
                                const GenerateOptions& options) {
  if (options.views < 0) throw std::invalid_argument("view budget must be >= 0");
  if (options.jobs < 1) throw std::invalid_argument("job count must be positive");
  const std::vector<fs::path> manifests = find_episode_manifests(data_dir);
  if (manifests.empty()) throw ManifestError("no episode manifests under " + data_dir.string());

  std::vector<EpisodeWork> work(manifests.size());
  parallel_for(static_cast<int>(manifests.size()), options.jobs, [&](int i) {
    EpisodeWork& w = work[static_cast<std::size_t>(i)];
    try {
      Episode episode = load_episode(manifests[static_cast<std::size_t>(i)]);
      w.outcome.episode_id = episode.episode_id;
      for (const PosedFrame& f : episode.frames) {
        w.images.push_back({f.view_index, f.intr.width, f.intr.height});
      }
      for (const Detection& d : episode.detections) {
        w.annotations.push_back(
            {d.view_index, d.class_id, d.confidence, d.bbox, count_nonzero(d.mask)});
      }

      // Which frame positions survive: pose filter first, then the seeded
      // view budget; the reference view is always kept (labels are seeded
      // from it).
      std::vector<int> keep;
      if (options.filter_poses || options.refine_poses) {
        const CycleFilterResult result = filter_views_cycle_consistency(episode, options.filter);
        if (options.refine_poses) episode = refine_poses(episode, result);
        if (options.filter_poses) {
          keep = result.retained;
          w.outcome.retained_views = static_cast<int>(result.retained.size());
        }
      }
      if (keep.empty()) {
        keep.resize(episode.frames.size());
        for (std::size_t k = 0; k < keep.size(); ++k) keep[k] = static_cast<int>(k);
        if (!options.filter_poses) w.outcome.retained_views = static_cast<int>(keep.size());
      }
      int ref_pos = -1;
      for (std::size_t k = 0; k < episode.frames.size(); ++k) {
        if (episode.frames[k].view_index == episode.reference_view) {
          ref_pos = static_cast<int>(k);
          break;
        }
      }
      if (ref_pos < 0) throw ManifestError("reference view missing from episode frames");
      if (!std::binary_search(keep.begin(), keep.end(), ref_pos)) {
        keep.insert(std::lower_bound(keep.begin(), keep.end(), ref_pos), ref_pos);
      }
      if (options.views > 0 && options.views < static_cast<int>(keep.size())) {
        std::vector<int> others;
        for (const int pos : keep) {
          if (pos != ref_pos) others.push_back(pos);
        }
        std::mt19937_64 rng(fnv1a(episode.episode_id) ^
                            (options.seed + 0x9e3779b97f4a7c15ull));
        std::vector<int> chosen;
        std::sample(others.begin(), others.end(), std::back_inserter(chosen),
                    options.views - 1, rng);
        chosen.push_back(ref_pos);
        std::sort(chosen.begin(), chosen.end());
        keep = std::move(chosen);
      }
      Episode subset = subset_episode(episode, keep);
      w.outcome.views_used = static_cast<int>(subset.frames.size());

      Detection seed;
      if (options.weak_seed) {
        const EpisodeGroundTruth gt =
            load_ground_truth(manifests[static_cast<std::size_t>(i)].parent_path());
        const GtView* ref_view = nullptr;
        for (const GtView& v : gt.views) {
          if (v.view_index == subset.reference_view) ref_view = &v;
        }
        if (!ref_view) throw ManifestError("ground truth lacks the reference view");
        if (count_nonzero(ref_view->target_visible) == 0) {
          throw std::runtime_error("target not visible in the reference view");
        }
        seed.view_index = subset.reference_view;
        seed.class_id = gt.target_class;
        seed.confidence = 1.0;
        seed.mask = ref_view->target_visible;
        seed.bbox = tight_bbox(seed.mask);
        seed.source = "ground_truth_seed";
      } else {
        seed = choose_seed(subset, options.segment.confidence_threshold);
      }

      SegmentConfig seg_config = options.segment;
      if (seed.source != "ground_truth_seed") {
        // Detector masks arrive eroded by up to two pixels; widen the
        // background standoff by the same margin so pixels just outside the
        // detection are not clamped as background when they may still be
        // object.
        seg_config.partition.dilate_radius += 2;
      }
      // Small or pre-eroded seed masks can vanish under the configured
      // erosion; back the radius off until a usable core survives.
      while (seg_config.partition.erode_radius > 0 &&
             count_nonzero(morphology(seed.mask, MorphOp::Erode,
                                      seg_config.partition.erode_radius)) < 16) {
        --seg_config.partition.erode_radius;
      }

      const ObjectSegment segment = segment_object(subset, seed, seg_config);
      w.labels = generate_pseudolabels(subset, segment, options.labels);
      w.outcome.ok = true;
    } catch (const std::exception& e) {
      w.outcome.ok = false;
      w.outcome.error = e.what();
      if (w.outcome.episode_id.empty()) {
        w.outcome.episode_id = manifests[static_cast<std::size_t>(i)].parent_path().filename().string();
      }
    }
  });

  GenerateSummary summary;
  summary.labels_dir = out_dir;
  summary.detector_dir = out_dir / "detector_baseline";
  std::vector<PseudoLabelSet> sets;
  for (EpisodeWork& w : work) {
    summary.outcomes.push_back(w.outcome);
    if (w.outcome.ok) {
      ++summary.succeeded;
      sets.push_back(std::move(*w.labels));
    }
  }

  fs::create_directories(out_dir);
  Json j;
  j["options"] = {{"views", options.views},
                  {"weak_seed", options.weak_seed},
                  {"filter_poses", options.filter_poses},
                  {"refine_poses", options.refine_poses},
                  {"vote_aggregation", options.segment.vote_aggregation},
                  {"seed", options.seed}};
  j["episodes"] = Json::array();
  for (const GenerateOutcome& o : summary.outcomes) {
    j["episodes"].push_back({{"episode_id", o.episode_id},
                             {"ok", o.ok},
                             {"error", o.error},
                             {"views_used", o.views_used},
                             {"retained_views", o.retained_views}});
  }
  j["succeeded"] = summary.succeeded;
  write_json_atomic(out_dir / "generate_summary.json", j);

  if (summary.succeeded == 0) {
    throw std::runtime_error("label generation failed for every episode; first error: " +
                             summary.outcomes.front().error);
  }
  export_labels(sets, out_dir);
  write_detector_baseline(work, summary.detector_dir);
  return summary;
}

// ---------------------------------------------------------------------------
// Pose refinement.

std::vector<RefineOutcome> refine_corpus(const std::filesystem::path& data_dir,
                                         const std::filesystem::path& out_dir,
                                         const CycleFilterParams& params, int jobs) {
  if (jobs < 1) throw std::invalid_argument("job count must be positive");
  const std::vector<fs::path> manifests = find_episode_manifests(data_dir);
  if (manifests.empty()) throw ManifestError("no episode manifests under " + data_dir.string());

  std::vector<RefineOutcome> outcomes(manifests.size());
  parallel_for(static_cast<int>(manifests.size()), jobs, [&](int i) {
    RefineOutcome& out = outcomes[static_cast<std::size_t>(i)];
    const fs::path& manifest = manifests[static_cast<std::size_t>(i)];
    try {
      const Episode episode = load_episode(manifest);
      out.episode_id = episode.episode_id;
      const CycleFilterResult result = filter_views_cycle_consistency(episode, params);
      for (const PairCheck& p : result.pairs) out.pairs_passed += p.ok ? 1 : 0;
      out.views_retained = static_cast<int>(result.retained.size());
      const Episode refined = refine_poses(episode, result);
      const fs::path dir = out_dir / (episode.episode_id.empty()
                                          ? manifest.parent_path().filename().string()
                                          : episode.episode_id);
      save_episode(refined, dir);
      const fs::path gt_path = manifest.parent_path() / "ground_truth.json";
      if (fs::exists(gt_path)) save_ground_truth(load_ground_truth(gt_path), dir);
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
      if (out.episode_id.empty()) out.episode_id = manifest.parent_path().filename().string();
    }
  });

  fs::create_directories(out_dir);
  Json j;
  j["episodes"] = Json::array();
  int succeeded = 0;
  for (const RefineOutcome& o : outcomes) {
    succeeded += o.ok ? 1 : 0;
    j["episodes"].push_back({{"episode_id", o.episode_id},
                             {"ok", o.ok},
                             {"error", o.error},
                             {"pairs_passed", o.pairs_passed},
                             {"views_retained", o.views_retained}});
  }
  j["succeeded"] = succeeded;
  write_json_atomic(out_dir / "refine_summary.json", j);
  if (succeeded == 0) {
    throw std::runtime_error("pose refinement failed for every episode; first error: " +
                             outcomes.front().error);
  }
  return outcomes;
}

// ---------------------------------------------------------------------------
// Evaluation.

Json EvalReport::to_json() const {
  Json j;
  j["map_2d"] = record_json(map2d);
  if (has_3d) {
    j["map_3d"] = record_json(map3d);
  } else {
    j["map_3d"] = nullptr;
  }
  j["sweep"] = Json::array();
  for (const SweepRow& row : sweep) {
    Json r;
    r["threshold"] = row.threshold;
    r["tp"] = row.tp;
    r["fp"] = row.fp;
    r["fn"] = row.fn;
    if (row.precision_defined) r["precision"] = row.precision;
    r["recall"] = row.recall;
    r["map"] = row.map;
    j["sweep"].push_back(std::move(r));
  }
  j["counts"] = {{"images", images}, {"predictions", predictions}, {"truths", truths}};
  return j;
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << "2-D boxes (IoU >= " << map2d.iou_threshold << ")\n" << format_eval_table(map2d);
  if (has_3d) {
    os << "3-D boxes (IoU >= " << map3d.iou_threshold << ")\n" << format_eval_table(map3d);
  }
  if (!sweep.empty()) {
    os << "confidence sweep\n";
    os << "  thr     tp    fp    fn   prec  recall    mAP\n";
    for (const SweepRow& row : sweep) {
      char prec[16];
      if (row.precision_defined) {
        std::snprintf(prec, sizeof(prec), "%5.3f", row.precision);
      } else {
        std::snprintf(prec, sizeof(prec), "%5s", "n/a");
      }
      char line[128];
      std::snprintf(line, sizeof(line), "  %-6.3g %5d %5d %5d  %s  %6.3f  %5.3f\n", row.threshold,
                    row.tp, row.fp, row.fn, prec, row.recall, row.map);
      os << line;
    }
  }
  os << images << " images, " << predictions << " predictions, " << truths << " ground truths\n";
  return os.str();
}

EvalReport evaluate_labels(const std::filesystem::path& labels_dir,
                           const std::filesystem::path& gt_dir, const EvalOptions& options) {
  const fs::path labels_2d = labels_dir / "labels_2d.json";
  if (!fs::exists(labels_2d)) throw ManifestError("missing label export: " + labels_2d.string());
  const Json doc = read_json_file(labels_2d);

  std::unordered_map<std::string, EpisodeGroundTruth> gt;
  for (const fs::path& path : find_ground_truth_files(gt_dir)) {
    EpisodeGroundTruth g = load_ground_truth(path);
    gt.emplace(g.episode_id, std::move(g));
  }

  struct ImageRef {
    std::string episode_id;
    int view_index = -1;
  };
  std::unordered_map<std::int64_t, ImageRef> image_of;
  std::set<std::string> episodes;

  EvalReport report;
  std::vector<PredictionBox> preds;
  std::vector<TruthBox> truths;
  auto gt_of = [&](const std::string& episode_id) -> const EpisodeGroundTruth& {
    const auto it = gt.find(episode_id);
    if (it == gt.end()) throw ManifestError("no ground truth for episode " + episode_id);
    return it->second;
  };

  for (const Json& im : doc.at("images")) {
    const std::int64_t id = im.at("id").get<std::int64_t>();
    const std::string episode_id = im.at("episode_id").get<std::string>();
    const int view = im.at("view_index").get<int>();
    image_of[id] = {episode_id, view};
    episodes.insert(episode_id);
    ++report.images;

    const EpisodeGroundTruth& g = gt_of(episode_id);
    const GtView* gv = nullptr;
    for (const GtView& v : g.views) {
      if (v.view_index == view) gv = &v;
    }
    if (!gv) throw ManifestError("ground truth for " + episode_id + " lacks view " +
                                 std::to_string(view));
    const PixelBox amodal = tight_bbox(gv->target_amodal);
    if (!amodal.empty()) {
      truths.push_back({episode_id + "/" + std::to_string(view), g.target_class, amodal});
    }
  }
  for (const Json& ann : doc.at("annotations")) {
    if (ann.value("empty", false)) continue;
    const auto it = image_of.find(ann.at("image_id").get<std::int64_t>());
    if (it == image_of.end()) throw ManifestError("annotation references an unknown image id");
    const Json& bbox = ann.at("bbox");
    PredictionBox p;
    p.group = it->second.episode_id + "/" + std::to_string(it->second.view_index);
    p.class_id = ann.at("category_id").get<int>();
    p.confidence = ann.value("score", 1.0);
    p.bbox = {bbox.at(0).get<int>(), bbox.at(1).get<int>(), bbox.at(2).get<int>(),
              bbox.at(3).get<int>()};
    preds.push_back(std::move(p));
  }
  report.predictions = static_cast<int>(preds.size());
  report.truths = static_cast<int>(truths.size());
  report.map2d = compute_map(preds, truths, options.iou2d, options.conf_threshold);
  if (!options.sweep.empty()) report.sweep = pr_sweep(preds, truths, options.sweep, options.iou2d);

  const fs::path labels_3d = labels_dir / "labels_3d.json";
  if (fs::exists(labels_3d)) {
    std::vector<Prediction3D> preds3;
    for (const Json& entry : read_json_file(labels_3d)) {
      Prediction3D p;
      p.group = entry.at("episode_id").get<std::string>();
      p.class_id = entry.at("class_id").get<int>();
      p.confidence = 1.0;
      p.box.class_id = p.class_id;
      p.box.center = vec3_from_json(entry.at("center"));
      p.box.dims = vec3_from_json(entry.at("dims"));
      p.box.yaw = entry.at("yaw").get<double>();
      preds3.push_back(std::move(p));
    }
    std::vector<Truth3D> truths3;
    for (const std::string& episode_id : episodes) {
      const EpisodeGroundTruth& g = gt_of(episode_id);
      truths3.push_back({episode_id, g.target_class, g.target_box()});
    }
    report.has_3d = true;
    report.map3d =
        compute_map_3d(preds3, truths3, options.iou3d, options.conf_threshold, options.bev_only);
  }
  return report;
}

}  // namespace mvseg
