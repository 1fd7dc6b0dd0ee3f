#include "avf/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace avf::nn {

GradCheckReport gradient_check(const GradCheckProblem& problem, double tolerance, double h,
                               double floor) {
  for (const auto& b : problem.blocks) b.grad->setZero();
  problem.backward();

  GradCheckReport rep;
  rep.tolerance = tolerance;
  for (const auto& b : problem.blocks) {
    const Mat<double> analytic = *b.grad;
    for (Eigen::Index i = 0; i < b.value->size(); ++i) {
      double& x = b.value->data()[i];
      const double orig = x;
      x = orig + h;
      const double up = problem.loss();
      x = orig - h;
      const double down = problem.loss();
      x = orig;
      const double num = (up - down) / (2.0 * h);
      const double ana = analytic.data()[i];
      const double err = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor});
      ++rep.checked;
      if (err > rep.max_rel_err || rep.worst_index < 0) {
        rep.max_rel_err = err;
        rep.worst_param = b.name;
        rep.worst_index = i;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  rep.passed = rep.max_rel_err <= tolerance;
  return rep;
}

Mat<double> probe_weights(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  return random_uniform<double>(rows, cols, rng, -1.0, 1.0);
}

}  // namespace avf::nn
