#include "mvseg/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "mvseg/jsonio.hpp"

namespace mvseg {

namespace {

const Json& require_field(const Json& obj, const char* key, const std::string& ctx) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ManifestError("missing field '" + std::string(key) + "' in " + ctx);
  return *it;
}

void check_pose_rigid(const Pose& pose, const std::string& ctx) {
  const Eigen::Matrix3d gram = pose.rotation.transpose() * pose.rotation;
  if ((gram - Eigen::Matrix3d::Identity()).norm() > 1e-9 ||
      std::abs(pose.rotation.determinant() - 1.0) > 1e-9) {
    throw ManifestError("pose is not a rigid transform in " + ctx);
  }
  if (!pose.translation.allFinite()) throw ManifestError("non-finite translation in " + ctx);
}

Intrinsics parse_intrinsics(const Json& j, const std::string& ctx) {
  Intrinsics k;
  k.fx = require_field(j, "fx", ctx).get<double>();
  k.fy = require_field(j, "fy", ctx).get<double>();
  k.cx = require_field(j, "cx", ctx).get<double>();
  k.cy = require_field(j, "cy", ctx).get<double>();
  k.width = require_field(j, "width", ctx).get<int>();
  k.height = require_field(j, "height", ctx).get<int>();
  if (k.fx <= 0 || k.fy <= 0) throw ManifestError("non-positive focal length in " + ctx);
  if (k.cx < 0 || k.cx >= k.width || k.cy < 0 || k.cy >= k.height) {
    throw ManifestError("principal point outside image in " + ctx);
  }
  return k;
}

DepthImage load_depth(const std::filesystem::path& path, const std::string& format,
                      const Intrinsics& k) {
  if (!std::filesystem::exists(path)) throw ManifestError("missing depth file: " + path.string());
  if (format == "f32") return read_depth_f32(path, k.width, k.height);
  if (format == "png16") {
    const auto mm = read_png_gray16(path);
    if (mm.width != k.width || mm.height != k.height) {
      throw ManifestError("depth size does not match intrinsics: " + path.string());
    }
    DepthImage d(mm.width, mm.height);
    for (int i = 0; i < mm.size(); ++i) d.data[i] = static_cast<float>(mm.data[i]) / 1000.0f;
    return d;
  }
  throw ManifestError("unknown depth_format '" + format + "' for " + path.string());
}

}  // namespace

const PosedFrame* Episode::frame_by_view(int view_index) const {
  for (const auto& f : frames) {
    if (f.view_index == view_index) return &f;
  }
  return nullptr;
}

const Detection* Episode::best_detection() const {
  const Detection* best = nullptr;
  for (const auto& d : detections) {
    if (!best || d.confidence > best->confidence ||
        (d.confidence == best->confidence && d.view_index < best->view_index)) {
      best = &d;
    }
  }
  return best;
}

Episode load_episode(const std::filesystem::path& manifest_path) {
  if (!std::filesystem::exists(manifest_path)) {
    throw ManifestError("missing manifest: " + manifest_path.string());
  }
  const Json doc = read_json_file(manifest_path);
  const std::filesystem::path dir = manifest_path.parent_path();
  const std::string ctx = manifest_path.string();

  Episode ep;
  ep.episode_id = require_field(doc, "episode_id", ctx).get<std::string>();
  ep.environment_id = require_field(doc, "environment_id", ctx).get<std::string>();
  ep.target_class = require_field(doc, "target_class", ctx).get<int>();
  ep.reference_view = require_field(doc, "reference_view", ctx).get<int>();

  std::set<int> views;
  for (const auto& jf : require_field(doc, "frames", ctx)) {
    PosedFrame f;
    f.view_index = require_field(jf, "view_index", ctx).get<int>();
    const std::string fctx = ctx + " frame " + std::to_string(f.view_index);
    if (!views.insert(f.view_index).second) throw ManifestError("duplicate view_index in " + fctx);
    f.rgb_path = require_field(jf, "rgb", fctx).get<std::string>();
    f.depth_path = require_field(jf, "depth", fctx).get<std::string>();
    f.depth_format = require_field(jf, "depth_format", fctx).get<std::string>();
    f.intr = parse_intrinsics(require_field(jf, "intrinsics", fctx), fctx);

    const auto pose_values = require_field(jf, "pose", fctx).get<std::vector<double>>();
    if (pose_values.size() != 16) throw ManifestError("pose must have 16 entries in " + fctx);
    std::array<double, 16> m{};
    std::copy(pose_values.begin(), pose_values.end(), m.begin());
    if (m[12] != 0 || m[13] != 0 || m[14] != 0 || m[15] != 1) {
      throw ManifestError("pose bottom row must be [0,0,0,1] in " + fctx);
    }
    f.pose = Pose::from_row_major(m);
    check_pose_rigid(f.pose, fctx);

    const auto rgb_abs = dir / f.rgb_path;
    if (!std::filesystem::exists(rgb_abs)) throw ManifestError("missing rgb file: " + rgb_abs.string());
    f.rgb = read_png_rgb8(rgb_abs);
    if (f.rgb.width != f.intr.width || f.rgb.height != f.intr.height) {
      throw ManifestError("rgb size does not match intrinsics: " + rgb_abs.string());
    }
    f.depth = load_depth(dir / f.depth_path, f.depth_format, f.intr);
    ep.frames.push_back(std::move(f));
  }
  if (ep.frames.empty()) throw ManifestError("episode has no frames: " + ctx);
  if (!views.count(ep.reference_view)) {
    throw ManifestError("reference_view does not name a frame in " + ctx);
  }

  for (const auto& jd : require_field(doc, "detections", ctx)) {
    Detection d;
    d.view_index = require_field(jd, "view_index", ctx).get<int>();
    const std::string dctx = ctx + " detection on view " + std::to_string(d.view_index);
    if (!views.count(d.view_index)) throw ManifestError("detection names unknown view in " + dctx);
    d.class_id = require_field(jd, "class_id", dctx).get<int>();
    d.confidence = require_field(jd, "confidence", dctx).get<double>();
    if (d.confidence < 0.0 || d.confidence > 1.0) {
      throw ManifestError("confidence outside [0,1] in " + dctx);
    }
    d.source = require_field(jd, "source", dctx).get<std::string>();
    if (d.source != "detector" && d.source != "ground_truth_seed") {
      throw ManifestError("unknown detection source '" + d.source + "' in " + dctx);
    }
    if (d.source == "ground_truth_seed" && d.confidence != 1.0) {
      throw ManifestError("ground_truth_seed detections must have confidence 1.0 in " + dctx);
    }
    d.mask_path = require_field(jd, "mask", dctx).get<std::string>();
    const auto mask_abs = dir / d.mask_path;
    if (!std::filesystem::exists(mask_abs)) {
      throw ManifestError("missing mask file: " + mask_abs.string());
    }
    d.mask = read_png_gray8(mask_abs);
    const PosedFrame* frame = ep.frame_by_view(d.view_index);
    if (d.mask.width != frame->intr.width || d.mask.height != frame->intr.height) {
      throw ManifestError("mask size does not match frame in " + dctx);
    }
    const auto bbox_values = require_field(jd, "bbox", dctx).get<std::vector<int>>();
    if (bbox_values.size() != 4) throw ManifestError("bbox must have 4 entries in " + dctx);
    d.bbox = {bbox_values[0], bbox_values[1], bbox_values[2], bbox_values[3]};
    const PixelBox tight = tight_bbox(d.mask);
    if (tight.x != d.bbox.x || tight.y != d.bbox.y || tight.w != d.bbox.w || tight.h != d.bbox.h) {
      throw ManifestError("bbox is not the tight bounding box of the mask in " + dctx);
    }
    ep.detections.push_back(std::move(d));
  }
  return ep;
}

std::filesystem::path save_episode(const Episode& episode, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "frames");
  std::filesystem::create_directories(dir / "masks");

  Json doc;
  doc["episode_id"] = episode.episode_id;
  doc["environment_id"] = episode.environment_id;
  doc["target_class"] = episode.target_class;
  doc["reference_view"] = episode.reference_view;

  char name[64];
  Json frames = Json::array();
  for (const auto& f : episode.frames) {
    std::snprintf(name, sizeof(name), "frames/view_%03d.rgb.png", f.view_index);
    const std::string rgb_rel = name;
    write_png_rgb8(dir / rgb_rel, f.rgb);

    std::string depth_rel;
    if (f.depth_format == "png16") {
      std::snprintf(name, sizeof(name), "frames/view_%03d.depth.png", f.view_index);
      depth_rel = name;
      Image<std::uint16_t> mm(f.depth.width, f.depth.height);
      for (int i = 0; i < f.depth.size(); ++i) {
        const float meters = f.depth.data[i];
        const double v = std::isfinite(meters) && meters > 0 ? std::round(meters * 1000.0) : 0.0;
        mm.data[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0, 65535.0));
      }
      write_png_gray16(dir / depth_rel, mm);
    } else {
      std::snprintf(name, sizeof(name), "frames/view_%03d.depth.f32", f.view_index);
      depth_rel = name;
      write_depth_f32(dir / depth_rel, f.depth);
    }

    Json jf;
    jf["view_index"] = f.view_index;
    jf["rgb"] = rgb_rel;
    jf["depth"] = depth_rel;
    jf["depth_format"] = f.depth_format;
    jf["intrinsics"] = Json{{"fx", f.intr.fx},      {"fy", f.intr.fy},
                            {"cx", f.intr.cx},      {"cy", f.intr.cy},
                            {"width", f.intr.width}, {"height", f.intr.height}};
    jf["pose"] = f.pose.to_row_major();
    frames.push_back(std::move(jf));
  }
  doc["frames"] = std::move(frames);

  Json detections = Json::array();
  for (size_t i = 0; i < episode.detections.size(); ++i) {
    const Detection& d = episode.detections[i];
    std::snprintf(name, sizeof(name), "masks/det_%03zu.png", i);
    const std::string mask_rel = name;
    write_png_gray8(dir / mask_rel, d.mask);

    Json jd;
    jd["view_index"] = d.view_index;
    jd["class_id"] = d.class_id;
    jd["confidence"] = d.confidence;
    jd["mask"] = mask_rel;
    jd["bbox"] = std::array<int, 4>{d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h};
    jd["source"] = d.source;
    detections.push_back(std::move(jd));
  }
  doc["detections"] = std::move(detections);

  const auto manifest_path = dir / "manifest.json";
  write_json_atomic(manifest_path, doc);
  return manifest_path;
}

std::size_t LabeledCloud::count(PointLabel label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

VoxelKey voxel_key(const Eigen::Vector3d& position, double voxel_size) {
  const double inv = 1.0 / voxel_size;
  return {static_cast<std::int64_t>(std::floor(position.x() * inv)),
          static_cast<std::int64_t>(std::floor(position.y() * inv)),
          static_cast<std::int64_t>(std::floor(position.z() * inv))};
}

LabeledCloud build_partitioned_cloud(const Episode& episode, const Detection& seed,
                                     const PartitionParams& params) {
  const PosedFrame* seed_frame = episode.frame_by_view(seed.view_index);
  if (!seed_frame) throw std::invalid_argument("seed detection does not belong to the episode");
  if (seed.mask.width != seed_frame->intr.width || seed.mask.height != seed_frame->intr.height) {
    throw std::invalid_argument("seed mask size does not match its frame");
  }
  if (params.voxel_size <= 0) throw std::invalid_argument("voxel_size must be positive");

  const Mask fg_mask = morphology(seed.mask, MorphOp::Erode, params.erode_radius);
  Mask inverted(seed.mask.width, seed.mask.height);
  for (int i = 0; i < seed.mask.size(); ++i) inverted.data[i] = seed.mask.data[i] ? 0 : 255;
  const Mask bg_mask = morphology(inverted, MorphOp::Dilate, params.dilate_radius);

  struct VoxelAgg {
    int counts[3] = {0, 0, 0};
    int first_index[3] = {-1, -1, -1};  // into the staging arrays, per label
  };
  std::map<VoxelKey, VoxelAgg> voxels;  // ordered keys fix the output order
  std::vector<CloudPoint> staged;
  std::vector<PointLabel> staged_labels;

  std::size_t label_totals[3] = {0, 0, 0};
  for (const auto& frame : episode.frames) {
    const bool is_seed_view = frame.view_index == seed.view_index;
    const auto points =
        unproject_frame(frame.depth, &frame.rgb, frame.intr, frame.pose, frame.view_index,
                        params.stride);
    for (const auto& p : points) {
      if (params.crop_radius > 0 &&
          (p.position - params.crop_center).norm() > params.crop_radius) {
        continue;
      }
      PointLabel label = PointLabel::Unknown;
      if (is_seed_view) {
        if (fg_mask.at(p.u, p.v)) {
          label = PointLabel::Foreground;
        } else if (bg_mask.at(p.u, p.v)) {
          label = PointLabel::Background;
        }
      }
      VoxelAgg& agg = voxels[voxel_key(p.position, params.voxel_size)];
      const int li = static_cast<int>(label);
      ++label_totals[li];
      if (agg.first_index[li] < 0) {
        agg.first_index[li] = static_cast<int>(staged.size());
        staged.push_back(p);
        staged_labels.push_back(label);
      }
      ++agg.counts[li];
    }
  }

  LabeledCloud cloud;
  cloud.points.reserve(voxels.size());
  cloud.labels.reserve(voxels.size());
  for (const auto& [key, agg] : voxels) {
    // Labeled pixels always beat unknown ones (seed evidence is sparse: with
    // many views the unknown mass would otherwise swallow every seed voxel);
    // between FG and BG the majority wins, ties going to FG.
    const int fg = agg.counts[static_cast<int>(PointLabel::Foreground)];
    const int bg = agg.counts[static_cast<int>(PointLabel::Background)];
    int winner;
    if (fg == 0 && bg == 0) {
      winner = static_cast<int>(PointLabel::Unknown);
    } else {
      winner = bg > fg ? static_cast<int>(PointLabel::Background)
                       : static_cast<int>(PointLabel::Foreground);
    }
    const int rep = agg.first_index[winner];
    cloud.points.push_back(staged[rep]);
    cloud.labels.push_back(static_cast<PointLabel>(winner));
  }

  // Checked on the pixel partition, before voxel voting can absorb a label.
  if (label_totals[static_cast<int>(PointLabel::Foreground)] == 0) {
    throw std::runtime_error("partitioned cloud has no foreground points (mask vanished under erosion?)");
  }
  if (label_totals[static_cast<int>(PointLabel::Background)] == 0) {
    throw std::runtime_error("partitioned cloud has no background points");
  }
  return cloud;
}

Eigen::Vector3d estimate_centroid(const Detection& detection, const PosedFrame& frame) {
  if (detection.mask.width != frame.depth.width || detection.mask.height != frame.depth.height) {
    throw std::invalid_argument("detection mask size does not match frame");
  }
  struct Sample {
    float z;
    int v, u;
  };
  std::vector<Sample> samples;
  for (int v = 0; v < frame.depth.height; ++v) {
    for (int u = 0; u < frame.depth.width; ++u) {
      const float z = frame.depth.at(u, v);
      if (detection.mask.at(u, v) && std::isfinite(z) && z > 0) samples.push_back({z, v, u});
    }
  }
  if (samples.empty()) throw std::runtime_error("no valid depth under the detection mask");
  std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
    return std::tie(a.z, a.v, a.u) < std::tie(b.z, b.v, b.u);
  });
  const Sample& med = samples[(samples.size() - 1) / 2];

  const double z = med.z;
  const Eigen::Vector3d cam(z * (med.u - frame.intr.cx) / frame.intr.fx,
                            z * (med.v - frame.intr.cy) / frame.intr.fy, z);
  return frame.pose.inverse().apply(cam);
}

}  // namespace mvseg
