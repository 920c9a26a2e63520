#pragma once

// Deliberately plain reference implementations used to cross-check the library
// versions. Kept free of library helpers wherever the math is the thing under
// test.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

namespace oracles {

struct LogisticFit {
  Eigen::VectorXd weights;  // 6 standardized-feature weights
  double bias = 0.0;
  double grad_norm = 0.0;
};

// Full-batch gradient descent on
//   sum_i log(1 + exp(-y_i (w.x_i + b))) + reg/2 |w|^2
// over pre-standardized features, run with a Lipschitz-safe step until the
// gradient norm drops below tol (or the iteration cap).
inline LogisticFit gradient_descent_logistic(const Eigen::MatrixXd& x,
                                             const Eigen::VectorXd& y01, double reg,
                                             double tol = 1e-8, long max_iters = 5000000) {
  const long n = x.rows();
  const long d = x.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double b = 0.0;
  // Lipschitz constant of the gradient: |X|_2^2 / 4 + reg (the bias column is
  // all ones; fold it in by bounding with the augmented Frobenius norm).
  const double lip = (x.squaredNorm() + n) / 4.0 + reg;
  const double lr = 1.0 / lip;
  Eigen::VectorXd grad_w(d);
  double grad_b = 0.0;
  for (long iter = 0; iter < max_iters; ++iter) {
    const Eigen::VectorXd s = x * w + Eigen::VectorXd::Constant(n, b);
    const Eigen::VectorXd p = s.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    grad_w = x.transpose() * (p - y01) + reg * w;
    grad_b = (p - y01).sum();
    const double gn = std::sqrt(grad_w.squaredNorm() + grad_b * grad_b);
    if (gn < tol) break;
    w -= lr * grad_w;
    b -= lr * grad_b;
  }
  LogisticFit fit;
  fit.weights = w;
  fit.bias = b;
  fit.grad_norm = std::sqrt(grad_w.squaredNorm() + grad_b * grad_b);
  return fit;
}

struct MeanFieldProblem {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> colors;
  std::vector<int> clamp;                        // +1 fg, -1 bg, 0 free
  std::vector<std::array<double, 2>> log_prob;   // {log p(bg), log p(fg)}
  double w_app = 10.0;
  double w_smooth = 3.0;
  double theta_alpha = 0.2;
  double theta_beta = 0.1;
  double theta_gamma = 0.05;
  int iterations = 5;
};

// Naive double-loop parallel mean-field for the binary Potts model. Mirrors
// the documented update and stopping rule, nothing else shared.
inline std::vector<double> naive_mean_field(const MeanFieldProblem& prob) {
  const size_t n = prob.positions.size();
  std::vector<double> q(n), next(n);
  for (size_t i = 0; i < n; ++i) {
    if (prob.clamp[i] > 0) {
      q[i] = 1.0;
    } else if (prob.clamp[i] < 0) {
      q[i] = 0.0;
    } else {
      const double m = std::max(prob.log_prob[i][0], prob.log_prob[i][1]);
      const double ef = std::exp(prob.log_prob[i][1] - m);
      const double eb = std::exp(prob.log_prob[i][0] - m);
      q[i] = ef / (ef + eb);
    }
  }
  for (int iter = 0; iter < prob.iterations; ++iter) {
    for (size_t i = 0; i < n; ++i) {
      if (prob.clamp[i] != 0) {
        next[i] = q[i];
        continue;
      }
      double m_fg = 0.0, m_bg = 0.0;
      for (size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double dx2 = (prob.positions[i] - prob.positions[j]).squaredNorm();
        const double dc2 = (prob.colors[i] - prob.colors[j]).squaredNorm();
        const double k =
            prob.w_app * std::exp(-dx2 / (2.0 * prob.theta_alpha * prob.theta_alpha) -
                                  dc2 / (2.0 * prob.theta_beta * prob.theta_beta)) +
            prob.w_smooth * std::exp(-dx2 / (2.0 * prob.theta_gamma * prob.theta_gamma));
        m_fg += k * (1.0 - q[j]);
        m_bg += k * q[j];
      }
      const double s_fg = prob.log_prob[i][1] - m_fg;
      const double s_bg = prob.log_prob[i][0] - m_bg;
      const double m = std::max(s_fg, s_bg);
      const double ef = std::exp(s_fg - m);
      const double eb = std::exp(s_bg - m);
      next[i] = ef / (ef + eb);
    }
    double delta = 0.0;
    for (size_t i = 0; i < n; ++i) delta = std::max(delta, std::abs(next[i] - q[i]));
    q.swap(next);
    if (delta < 1e-5) break;
  }
  return q;
}

}  // namespace oracles
