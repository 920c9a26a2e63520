// Scratch driver: inspect unary/CRF behavior on ground voxels for one episode.
#include <cstdio>
#include <filesystem>

#include "mvseg/ingest.hpp"
#include "mvseg/pipeline.hpp"
#include "mvseg/segment3d.hpp"

using namespace mvseg;

int main(int argc, char** argv) {
  const std::filesystem::path root = argc > 1 ? argv[1] : "/tmp/pipe_smoke";
  const std::string episode_name = argc > 2 ? argv[2] : "episode_000";
  const Episode episode = load_episode(root / "data" / episode_name / "manifest.json");
  const EpisodeGroundTruth gt = load_ground_truth(root / "data" / episode_name);
  const Box3D& tb = gt.target_box();

  for (const Detection& d : episode.detections) {
    const PosedFrame* f = episode.frame_by_view(d.view_index);
    const bool framed = d.bbox.x > 0 && d.bbox.y > 0 && d.bbox.x + d.bbox.w < f->intr.width &&
                        d.bbox.y + d.bbox.h < f->intr.height &&
                        2 * d.bbox.w * d.bbox.h <= f->intr.width * f->intr.height;
    std::printf("det view %2d cls %d conf %.3f bbox [%2d %2d %2d %2d] px %4d %s\n", d.view_index,
                d.class_id, d.confidence, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h,
                count_nonzero(d.mask), framed ? "framed" : "-");
  }

  const Detection seed = choose_seed(episode);
  std::printf("seed view %d conf %.3f bbox [%d %d %d %d] px %d\n", seed.view_index,
              seed.confidence, seed.bbox.x, seed.bbox.y, seed.bbox.w, seed.bbox.h,
              count_nonzero(seed.mask));

  SegmentConfig config = corpus_segment_defaults();
  while (config.partition.erode_radius > 0 &&
         count_nonzero(morphology(seed.mask, MorphOp::Erode, config.partition.erode_radius)) < 16) {
    --config.partition.erode_radius;
  }
  const PosedFrame* seed_frame = episode.frame_by_view(seed.view_index);
  PartitionParams partition = config.partition;
  partition.crop_center = estimate_centroid(seed, *seed_frame);
  const LabeledCloud cloud = build_partitioned_cloud(episode, seed, partition);
  std::printf("cloud %zu: fg %zu bg %zu unk %zu\n", cloud.points.size(),
              cloud.count(PointLabel::Foreground), cloud.count(PointLabel::Background),
              cloud.count(PointLabel::Unknown));

  // Where do BG clamps with FG-like color live in the seed view?
  {
    Eigen::Vector3d fg_mean = Eigen::Vector3d::Zero();
    int n_fg = 0;
    for (size_t i = 0; i < cloud.points.size(); ++i) {
      if (cloud.labels[i] == PointLabel::Foreground) {
        fg_mean += cloud.points[i].color;
        ++n_fg;
      }
    }
    fg_mean /= std::max(1, n_fg);
    int shown = 0;
    for (size_t i = 0; i < cloud.points.size() && shown < 12; ++i) {
      if (cloud.labels[i] != PointLabel::Background) continue;
      if ((cloud.points[i].color - fg_mean).norm() > 0.08) continue;
      std::printf("  FG-colored BG: view %d px (%d,%d) pos (%.2f %.2f %.2f)\n",
                  cloud.points[i].view_index, cloud.points[i].u, cloud.points[i].v,
                  cloud.points[i].position.x(), cloud.points[i].position.y(),
                  cloud.points[i].position.z());
      ++shown;
    }
  }

  // ASCII view of the seed detection's bottom edge: mask vs object-colored rgb.
  {
    const PosedFrame* f = episode.frame_by_view(seed.view_index);
    Eigen::Vector3d fg_mean = Eigen::Vector3d::Zero();
    int n_fg = 0;
    for (size_t i = 0; i < cloud.points.size(); ++i) {
      if (cloud.labels[i] == PointLabel::Foreground) {
        fg_mean += cloud.points[i].color;
        ++n_fg;
      }
    }
    fg_mean /= std::max(1, n_fg);
    for (int y = std::max(0, seed.bbox.y - 2); y < f->intr.height; ++y) {
      std::printf("  row %2d: ", y);
      for (int x = 0; x < f->intr.width; ++x) {
        const auto& c = f->rgb.at(x, y);
        const bool obj =
            (Eigen::Vector3d(c.r, c.g, c.b) / 255.0 - fg_mean).norm() < 0.08;
        std::printf("%c", seed.mask.at(x, y) ? (obj ? '#' : '!') : (obj ? 'o' : '.'));
      }
      std::printf("\n");
    }
  }

  const UnaryModel unary = train_unary(cloud, config.unary_reg);
  std::printf("unary weights: ");
  for (int k = 0; k < 6; ++k) std::printf("%+.3f ", unary.weights[k]);
  std::printf(" bias %+.3f\n", unary.bias);
  for (const auto& w : unary.warnings) std::printf("unary warning: %s\n", w.c_str());

  std::vector<std::array<double, 2>> logprob(cloud.points.size());
  for (size_t i = 0; i < cloud.points.size(); ++i) logprob[i] = unary.log_probs(cloud.points[i]);
  const Segmentation3D seg = crf_refine(cloud, logprob, config.crf);

  // Bucket cloud points: ground-height vs above; inside vs outside the tight
  // ground-truth footprint (with 5 cm slack).
  auto inside_gt = [&](const Eigen::Vector3d& p) {
    const Eigen::Vector2d d = p.head<2>() - tb.center.head<2>();
    const double c = std::cos(tb.yaw), s = std::sin(tb.yaw);
    const double lx = c * d.x() + s * d.y();
    const double ly = -s * d.x() + c * d.y();
    return std::abs(lx) <= 0.5 * tb.dims.x() + 0.05 && std::abs(ly) <= 0.5 * tb.dims.y() + 0.05;
  };
  int n_gnd_in = 0, n_gnd_in_obj = 0, n_gnd_out = 0, n_gnd_out_obj = 0;
  int n_abv_in = 0, n_abv_in_obj = 0, n_abv_out = 0, n_abv_out_obj = 0;
  double lp_fg_gnd_out = 0.0;
  int fg_gnd_out_by_unary = 0;
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i].position;
    const bool gnd = p.z() < 0.06;
    const bool in = inside_gt(p);
    const bool obj = seg.object[i] != 0;
    if (gnd && in) { ++n_gnd_in; n_gnd_in_obj += obj; }
    if (gnd && !in) {
      ++n_gnd_out;
      n_gnd_out_obj += obj;
      lp_fg_gnd_out += logprob[i][1];
      fg_gnd_out_by_unary += logprob[i][1] > logprob[i][0];
    }
    if (!gnd && in) { ++n_abv_in; n_abv_in_obj += obj; }
    if (!gnd && !in) { ++n_abv_out; n_abv_out_obj += obj; }
  }
  std::printf("ground  inside-gt:  %4d pts, %4d labeled object\n", n_gnd_in, n_gnd_in_obj);
  std::printf("ground  outside-gt: %4d pts, %4d labeled object (unary said FG on %d, mean logp_fg %.2f)\n",
              n_gnd_out, n_gnd_out_obj, fg_gnd_out_by_unary,
              n_gnd_out ? lp_fg_gnd_out / n_gnd_out : 0.0);
  std::printf("above   inside-gt:  %4d pts, %4d labeled object\n", n_abv_in, n_abv_in_obj);
  std::printf("above   outside-gt: %4d pts, %4d labeled object\n", n_abv_out, n_abv_out_obj);

  // Colors: ground vs target primitive.
  std::printf("sample colors: ");
  int shown = 0;
  for (size_t i = 0; i < cloud.points.size() && shown < 6; ++i) {
    if (cloud.labels[i] == PointLabel::Foreground && shown < 3) {
      std::printf("FG(%.2f %.2f %.2f) ", cloud.points[i].color.x(), cloud.points[i].color.y(),
                  cloud.points[i].color.z());
      ++shown;
    } else if (cloud.labels[i] == PointLabel::Background && shown >= 3) {
      std::printf("BG(%.2f %.2f %.2f) ", cloud.points[i].color.x(), cloud.points[i].color.y(),
                  cloud.points[i].color.z());
      ++shown;
    }
  }
  std::printf("\n");
  return 0;
}
