// Scratch driver: grid-search segmentation parameters on a small corpus.
#include <cstdio>
#include <filesystem>
#include <vector>

#include "mvseg/evalkit.hpp"
#include "mvseg/ingest.hpp"
#include "mvseg/labelgen.hpp"
#include "mvseg/pipeline.hpp"
#include "mvseg/segment3d.hpp"

using namespace mvseg;

int main() {
  const std::filesystem::path root = "/tmp/pipe_smoke";

  struct Case {
    Episode episode;
    EpisodeGroundTruth gt;
  };
  std::vector<Case> cases;
  for (const auto& manifest : find_episode_manifests(root / "data")) {
    cases.push_back({load_episode(manifest), load_ground_truth(manifest.parent_path())});
  }

  std::printf("votes voxel  reg    w_sm  crop | mean_iou3d  mean_iou2d  worst3d\n");
  for (const bool votes : {false, true}) {
    for (const double voxel : {0.05, 0.04}) {
      for (const double reg : {1e-2, 1e-1}) {
        for (const double w_smooth : {3.0, 1.0}) {
          for (const double crop : {1.6, 2.0}) {
            SegmentConfig config = corpus_segment_defaults();
            config.vote_aggregation = votes;
            config.partition.voxel_size = voxel;
            config.unary_reg = reg;
            config.crf.w_smooth = w_smooth;
            config.partition.crop_radius = crop;

            double sum3d = 0.0, sum2d = 0.0, worst = 1.0;
            int n2d = 0;
            for (const Case& c : cases) {
              const Detection* seed = nullptr;
              int best_edges = 5, best_px = -1;
              for (const Detection& d : c.episode.detections) {
                const PosedFrame* f = c.episode.frame_by_view(d.view_index);
                const int edges = (d.bbox.x == 0) + (d.bbox.y == 0) +
                                  (d.bbox.x + d.bbox.w >= f->intr.width) +
                                  (d.bbox.y + d.bbox.h >= f->intr.height);
                const int px = count_nonzero(d.mask);
                if (!seed || d.confidence > seed->confidence ||
                    (d.confidence == seed->confidence &&
                     (edges < best_edges || (edges == best_edges && px > best_px)))) {
                  seed = &d;
                  best_edges = edges;
                  best_px = px;
                }
              }
              try {
                const ObjectSegment segment = segment_object(c.episode, *seed, config);
                const PseudoLabelSet labels = generate_pseudolabels(c.episode, segment);
                const double i3 = iou_3d(labels.box, c.gt.target_box());
                sum3d += i3;
                worst = std::min(worst, i3);
                for (const ViewLabel& v : labels.views) {
                  const GtView* gv = nullptr;
                  for (const GtView& g : c.gt.views)
                    if (g.view_index == v.view_index) gv = &g;
                  const PixelBox amodal = tight_bbox(gv->target_amodal);
                  if (amodal.empty()) continue;
                  sum2d += v.empty ? 0.0 : iou_2d(v.bbox, amodal);
                  ++n2d;
                }
              } catch (const std::exception& e) {
                worst = 0.0;
              }
            }
            std::printf("%5d %.2f  %.0e  %4.1f  %4.1f | %10.3f  %10.3f  %7.3f\n", votes, voxel,
                        reg, w_smooth, crop, sum3d / cases.size(), sum2d / std::max(1, n2d),
                        worst);
          }
        }
      }
    }
  }
  return 0;
}
