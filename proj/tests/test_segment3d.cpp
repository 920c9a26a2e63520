#include <doctest.h>

#include <random>

#include "mvseg/segment3d.hpp"
#include "oracles.hpp"

using namespace mvseg;

namespace {

CloudPoint make_point(const Eigen::Vector3d& pos, const Eigen::Vector3d& color) {
  CloudPoint p;
  p.position = pos;
  p.color = color;
  return p;
}

LabeledCloud two_gaussian_clusters(int per_class, double separation, double spread,
                                   std::mt19937_64& rng) {
  LabeledCloud cloud;
  std::normal_distribution<double> jitter(0.0, spread);
  for (int i = 0; i < per_class; ++i) {
    cloud.points.push_back(make_point({-separation / 2 + jitter(rng), jitter(rng), jitter(rng)},
                                      {0.8, 0.2, 0.2}));
    cloud.labels.push_back(PointLabel::Foreground);
    cloud.points.push_back(make_point({separation / 2 + jitter(rng), jitter(rng), jitter(rng)},
                                      {0.2, 0.2, 0.8}));
    cloud.labels.push_back(PointLabel::Background);
  }
  return cloud;
}

}  // namespace

TEST_CASE("well-separated clusters give perfect training accuracy and confident probabilities") {
  std::mt19937_64 rng(101);
  const LabeledCloud cloud = two_gaussian_clusters(100, 4.0, 0.1, rng);
  const UnaryModel model = train_unary(cloud, 1e-3);
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const double s = model.decision_value(cloud.points[i]);
    const bool is_fg = cloud.labels[i] == PointLabel::Foreground;
    CHECK((s > 0) == is_fg);
    if (is_fg) CHECK(std::exp(model.log_probs(cloud.points[i])[1]) > 0.99);
  }
}

TEST_CASE("unary log-probabilities are normalized") {
  std::mt19937_64 rng(103);
  const LabeledCloud cloud = two_gaussian_clusters(40, 2.0, 0.3, rng);
  const UnaryModel model = train_unary(cloud, 0.1);
  std::uniform_real_distribution<double> unit(-3.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const CloudPoint p = make_point({unit(rng), unit(rng), unit(rng)},
                                    {0.5, 0.5, 0.5});
    const auto lp = model.log_probs(p);
    CHECK(std::exp(lp[0]) + std::exp(lp[1]) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("identical fg and bg features produce maximal uncertainty") {
  LabeledCloud cloud;
  for (int i = 0; i < 30; ++i) {
    const Eigen::Vector3d pos(0.1 * i, 0.0, 1.0);
    cloud.points.push_back(make_point(pos, {0.5, 0.5, 0.5}));
    cloud.labels.push_back(PointLabel::Foreground);
    cloud.points.push_back(make_point(pos, {0.5, 0.5, 0.5}));
    cloud.labels.push_back(PointLabel::Background);
  }
  const UnaryModel model = train_unary(cloud, 0.1);
  for (const auto& p : cloud.points) {
    CHECK(std::exp(model.log_probs(p)[1]) == doctest::Approx(0.5).epsilon(1e-9));
  }
}

TEST_CASE("zero-variance features are floored with a warning") {
  std::mt19937_64 rng(107);
  LabeledCloud cloud = two_gaussian_clusters(20, 3.0, 0.2, rng);
  for (auto& p : cloud.points) p.color = Eigen::Vector3d(0.5, 0.5, 0.5);  // constant colors
  const UnaryModel model = train_unary(cloud, 0.1);
  CHECK(model.warnings.size() == 3);
  CHECK(model.feature_std.minCoeff() >= 1e-8);
}

TEST_CASE("newton solution matches a gradient-descent oracle") {
  std::mt19937_64 rng(109);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  LabeledCloud cloud;
  // 50-point separable problem with a margin around a random hyperplane.
  const Eigen::Vector3d normal = Eigen::Vector3d(0.6, -0.3, 0.74).normalized();
  int made = 0;
  while (made < 50) {
    const Eigen::Vector3d pos(unit(rng), unit(rng), unit(rng));
    const Eigen::Vector3d color((unit(rng) + 1) / 2, (unit(rng) + 1) / 2, (unit(rng) + 1) / 2);
    const double side = normal.dot(pos) - 0.1;
    if (std::abs(side) < 0.15) continue;  // enforce a margin
    cloud.points.push_back(make_point(pos, color));
    cloud.labels.push_back(side > 0 ? PointLabel::Foreground : PointLabel::Background);
    ++made;
  }
  const double reg = 0.1;
  const UnaryModel model = train_unary(cloud, reg);

  // Standardize exactly as documented, then hand the matrix to the oracle.
  const int n = static_cast<int>(cloud.points.size());
  Eigen::MatrixXd raw(n, 6);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    raw.row(i) << cloud.points[i].position.x(), cloud.points[i].position.y(),
        cloud.points[i].position.z(), cloud.points[i].color.x(), cloud.points[i].color.y(),
        cloud.points[i].color.z();
    y(i) = cloud.labels[i] == PointLabel::Foreground ? 1.0 : 0.0;
  }
  const Eigen::RowVectorXd mean = raw.colwise().mean();
  Eigen::MatrixXd centered = raw.rowwise() - mean;
  Eigen::RowVectorXd stdev = centered.array().square().colwise().mean().sqrt();
  for (int c = 0; c < 6; ++c) stdev(c) = std::max(stdev(c), 1e-8);
  const Eigen::MatrixXd x = centered.array().rowwise() / stdev.array();

  const auto fit = oracles::gradient_descent_logistic(x, y, reg);
  REQUIRE(fit.grad_norm < 1e-8);

  Eigen::VectorXd ours(7), theirs(7);
  ours << model.weights, model.bias;
  theirs << fit.weights, fit.bias;
  const double cosine = ours.dot(theirs) / (ours.norm() * theirs.norm());
  CHECK(cosine > 1.0 - 1e-4);
  // Same strictly convex objective: the minimizers should coincide outright.
  CHECK((ours - theirs).norm() < 1e-4 * theirs.norm());
}

TEST_CASE("zero pairwise weights reduce the crf to the unary argmax") {
  std::mt19937_64 rng(113);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  LabeledCloud cloud;
  std::vector<std::array<double, 2>> unary;
  for (int i = 0; i < 150; ++i) {
    cloud.points.push_back(make_point({unit(rng), unit(rng), unit(rng)},
                                      {(unit(rng) + 1) / 2, 0.5, 0.5}));
    cloud.labels.push_back(PointLabel::Unknown);
    const double lp_fg = unit(rng) * 3;
    const double lp_bg = unit(rng) * 3;
    unary.push_back({lp_bg, lp_fg});
  }
  CrfParams params;
  params.w_app = 0.0;
  params.w_smooth = 0.0;
  const Segmentation3D seg = crf_refine(cloud, unary, params);
  for (size_t i = 0; i < unary.size(); ++i) {
    CHECK(seg.object[i] == (unary[i][1] > unary[i][0] ? 1 : 0));
    const double m = std::max(unary[i][0], unary[i][1]);
    const double ef = std::exp(unary[i][1] - m);
    const double eb = std::exp(unary[i][0] - m);
    CHECK(seg.marginal[i] == doctest::Approx(ef / (ef + eb)).epsilon(1e-12));
  }
}

TEST_CASE("crf heals sparse unary label flips inside tight clusters") {
  std::mt19937_64 rng(127);
  std::normal_distribution<double> jitter(0.0, 0.05);
  LabeledCloud cloud;
  std::vector<std::array<double, 2>> unary;
  std::vector<bool> truth;  // true = fg cluster
  auto add_cluster = [&](const Eigen::Vector3d& center, const Eigen::Vector3d& color, bool fg) {
    for (int i = 0; i < 100; ++i) {
      cloud.points.push_back(
          make_point(center + Eigen::Vector3d(jitter(rng), jitter(rng), jitter(rng)), color));
      cloud.labels.push_back(PointLabel::Unknown);
      truth.push_back(fg);
      const bool flipped = i % 10 == 0;  // 10% wrong unaries
      const bool says_fg = fg != flipped;
      unary.push_back(says_fg ? std::array<double, 2>{std::log(0.1), std::log(0.9)}
                              : std::array<double, 2>{std::log(0.9), std::log(0.1)});
    }
  };
  add_cluster({0, 0, 0}, {0.9, 0.1, 0.1}, true);
  add_cluster({1, 0, 0}, {0.1, 0.1, 0.9}, false);

  const Segmentation3D seg = crf_refine(cloud, unary, CrfParams{});
  int correct = 0;
  for (size_t i = 0; i < truth.size(); ++i) correct += (seg.object[i] == 1) == truth[i];
  CHECK(correct >= 198);  // >= 99%
}

TEST_CASE("crf matches the naive double-loop mean-field oracle") {
  std::mt19937_64 rng(131);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LabeledCloud cloud;
  oracles::MeanFieldProblem prob;
  for (int i = 0; i < 160; ++i) {
    const Eigen::Vector3d pos(unit(rng), unit(rng), unit(rng));
    const Eigen::Vector3d color(unit(rng), unit(rng), unit(rng));
    cloud.points.push_back(make_point(pos, color));
    const int roll = i % 10;
    PointLabel label = PointLabel::Unknown;
    if (roll == 0) label = PointLabel::Foreground;
    if (roll == 1) label = PointLabel::Background;
    cloud.labels.push_back(label);
    const double lp_fg = (unit(rng) - 0.5) * 4;
    const double lp_bg = (unit(rng) - 0.5) * 4;
    prob.positions.push_back(pos);
    prob.colors.push_back(color);
    prob.clamp.push_back(label == PointLabel::Foreground ? 1
                         : label == PointLabel::Background ? -1
                                                           : 0);
    prob.log_prob.push_back({lp_bg, lp_fg});
  }
  const CrfParams params;  // defaults mirror the oracle's defaults
  const Segmentation3D seg = crf_refine(cloud, prob.log_prob, params);
  const auto expected = oracles::naive_mean_field(prob);
  REQUIRE(seg.marginal.size() == expected.size());
  for (size_t i = 0; i < expected.size(); ++i) {
    CHECK(std::abs(seg.marginal[i] - expected[i]) < 1e-6);
  }
}

TEST_CASE("clamped seed points never change label") {
  std::mt19937_64 rng(137);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LabeledCloud cloud;
  std::vector<std::array<double, 2>> unary;
  for (int i = 0; i < 80; ++i) {
    cloud.points.push_back(make_point({unit(rng) * 0.2, unit(rng) * 0.2, unit(rng) * 0.2},
                                      {unit(rng), unit(rng), unit(rng)}));
    cloud.labels.push_back(i < 10   ? PointLabel::Foreground
                           : i < 20 ? PointLabel::Background
                                    : PointLabel::Unknown);
    // Adversarial unaries pushing every point toward the opposite side.
    unary.push_back(i < 10 ? std::array<double, 2>{std::log(0.99), std::log(0.01)}
                           : std::array<double, 2>{std::log(0.01), std::log(0.99)});
  }
  const Segmentation3D seg = crf_refine(cloud, unary, CrfParams{});
  for (int i = 0; i < 10; ++i) {
    CHECK(seg.object[i] == 1);
    CHECK(seg.marginal[i] == 1.0);
  }
  for (int i = 10; i < 20; ++i) {
    CHECK(seg.object[i] == 0);
    CHECK(seg.marginal[i] == 0.0);
  }
}

TEST_CASE("pairwise kernel is symmetric") {
  std::mt19937_64 rng(139);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const CrfParams params;
  for (int trial = 0; trial < 200; ++trial) {
    const CloudPoint a = make_point({unit(rng), unit(rng), unit(rng)},
                                    {(unit(rng) + 1) / 2, (unit(rng) + 1) / 2, (unit(rng) + 1) / 2});
    const CloudPoint b = make_point({unit(rng), unit(rng), unit(rng)},
                                    {(unit(rng) + 1) / 2, (unit(rng) + 1) / 2, (unit(rng) + 1) / 2});
    CHECK(pairwise_kernel(a, b, params) == pairwise_kernel(b, a, params));
  }
}

TEST_CASE("crf refinement is bit-deterministic") {
  std::mt19937_64 rng(149);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LabeledCloud cloud;
  std::vector<std::array<double, 2>> unary;
  for (int i = 0; i < 300; ++i) {
    cloud.points.push_back(make_point({unit(rng), unit(rng), unit(rng)},
                                      {unit(rng), unit(rng), unit(rng)}));
    cloud.labels.push_back(i % 7 == 0 ? PointLabel::Foreground
                           : i % 7 == 1 ? PointLabel::Background
                                        : PointLabel::Unknown);
    unary.push_back({(unit(rng) - 0.5) * 4, (unit(rng) - 0.5) * 4});
  }
  const Segmentation3D a = crf_refine(cloud, unary, CrfParams{});
  const Segmentation3D b = crf_refine(cloud, unary, CrfParams{});
  CHECK(a.object == b.object);
  CHECK(a.marginal == b.marginal);  // exact double equality, not approximate
}

TEST_CASE("crf rejects invalid input") {
  LabeledCloud empty;
  CHECK_THROWS(crf_refine(empty, {}, CrfParams{}));

  LabeledCloud one;
  one.points.push_back(make_point({0, 0, 0}, {0, 0, 0}));
  one.labels.push_back(PointLabel::Unknown);
  std::vector<std::array<double, 2>> bad_unary{{std::log(0.5), std::numeric_limits<double>::quiet_NaN()}};
  CHECK_THROWS(crf_refine(one, bad_unary, CrfParams{}));
}
