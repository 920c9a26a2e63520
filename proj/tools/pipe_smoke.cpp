// Scratch driver: simulate a corpus, generate labels, evaluate.
// Usage: pipe_smoke [--no-votes] [--noise] [episodes] [views] [misclass] [out_dir]
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "mvseg/pipeline.hpp"

using namespace mvseg;

int main(int argc, char** argv) {
  bool votes = true, noise = false;
  std::vector<std::string> pos;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--no-votes") votes = false;
    else if (a == "--noise") noise = true;
    else pos.push_back(a);
  }
  const int episodes = pos.size() > 0 ? std::atoi(pos[0].c_str()) : 4;
  const int views = pos.size() > 1 ? std::atoi(pos[1].c_str()) : 8;
  const double misclass = pos.size() > 2 ? std::atof(pos[2].c_str()) : 0.0;
  const std::filesystem::path root = pos.size() > 3 ? pos[3] : "/tmp/pipe_smoke";
  std::filesystem::remove_all(root);

  const auto t0 = std::chrono::steady_clock::now();
  const SynthWorld world = make_random_world(7);
  std::printf("world: %zu primitives\n", world.primitives.size());

  SimulateOptions sim;
  sim.episodes = episodes;
  sim.seed = 11;
  sim.jobs = 8;
  sim.policy.n_views = views;
  sim.policy.detector.misclass_rate = misclass;
  if (noise) sim.policy.noise = ActionNoiseModel{};
  const auto outcomes = simulate_corpus(world, sim, root / "data");
  const auto t1 = std::chrono::steady_clock::now();
  int abandoned = 0;
  for (const auto& o : outcomes) {
    abandoned += o.abandoned;
    if (o.abandoned)
      std::printf("%s: ABANDONED %s\n", o.episode_id.c_str(), o.reason.c_str());
  }
  std::printf("simulate: %.2f s (%d episodes, %d abandoned)\n",
              std::chrono::duration<double>(t1 - t0).count(), episodes, abandoned);

  GenerateOptions gen;
  gen.jobs = 8;
  gen.segment = corpus_segment_defaults();
  gen.segment.vote_aggregation = votes;
  gen.filter_poses = noise;
  gen.refine_poses = noise;
  const GenerateSummary summary = generate_labels(root / "data", root / "labels", gen);
  const auto t2 = std::chrono::steady_clock::now();
  for (const auto& o : summary.outcomes) {
    if (!o.ok) std::printf("%s: FAILED %s\n", o.episode_id.c_str(), o.error.c_str());
  }
  std::printf("generate: %.2f s (%d ok)\n", std::chrono::duration<double>(t2 - t1).count(),
              summary.succeeded);

  EvalOptions ev;
  ev.sweep = {0.5, 0.7, 0.9};
  const EvalReport pseudo = evaluate_labels(root / "labels", root / "data", ev);
  std::printf("pseudo:\n%s\n", pseudo.table().c_str());
  const EvalReport detector = evaluate_labels(summary.detector_dir, root / "data", ev);
  std::printf("detector:\n%s\n", detector.table().c_str());
  const auto t3 = std::chrono::steady_clock::now();
  std::printf("eval: %.2f s\n", std::chrono::duration<double>(t3 - t2).count());
  std::printf("pseudo mAP %.4f vs detector mAP %.4f (margin %+.1f pts)\n", pseudo.map2d.map,
              detector.map2d.map, 100.0 * (pseudo.map2d.map - detector.map2d.map));
  return 0;
}
