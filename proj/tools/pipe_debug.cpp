// Scratch driver: compare exported pseudo-labels against ground truth.
#include <cstdio>
#include <filesystem>

#include "mvseg/evalkit.hpp"
#include "mvseg/ingest.hpp"
#include "mvseg/pipeline.hpp"

using namespace mvseg;

int main(int argc, char** argv) {
  const std::filesystem::path root = argc > 1 ? argv[1] : "/tmp/pipe_smoke";

  for (const PseudoLabelSet& set : import_labels(root / "labels")) {
    const EpisodeGroundTruth gt = load_ground_truth(root / "data" / set.episode_id);
    const Box3D& tb = gt.target_box();
    const Box3D& pb = set.box;
    std::printf("=== %s target_class=%d\n", set.episode_id.c_str(), gt.target_class);
    std::printf("  gt  box (%.2f %.2f %.2f) dims (%.2f %.2f %.2f) yaw %+.2f\n", tb.center.x(),
                tb.center.y(), tb.center.z(), tb.dims.x(), tb.dims.y(), tb.dims.z(), tb.yaw);
    std::printf("  lbl box (%.2f %.2f %.2f) dims (%.2f %.2f %.2f) yaw %+.2f iou3d %.3f\n",
                pb.center.x(), pb.center.y(), pb.center.z(), pb.dims.x(), pb.dims.y(), pb.dims.z(),
                pb.yaw, iou_3d(pb, tb));
    for (const ViewLabel& v : set.views) {
      const GtView* gv = nullptr;
      for (const GtView& g : gt.views)
        if (g.view_index == v.view_index) gv = &g;
      const PixelBox amodal = tight_bbox(gv->target_amodal);
      const double iou = v.empty || amodal.empty() ? 0.0 : iou_2d(v.bbox, amodal);
      std::printf("    view %2d: label [%3d %3d %3d %3d]%s amodal [%3d %3d %3d %3d] iou %.3f%s\n",
                  v.view_index, v.bbox.x, v.bbox.y, v.bbox.w, v.bbox.h, v.empty ? " EMPTY" : "",
                  amodal.x, amodal.y, amodal.w, amodal.h, iou, iou < 0.5 ? "  <-- FP" : "");
    }
  }
  return 0;
}
