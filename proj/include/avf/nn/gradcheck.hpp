#pragma once

#include <functional>
#include <string>
#include <vector>

#include "avf/nn/tensor.hpp"

namespace avf::nn {

/// A tensor to perturb (parameter or input) and where its analytic gradient lands.
struct GradBlock {
  std::string name;
  Mat<double>* value = nullptr;
  Mat<double>* grad = nullptr;
};

struct GradCheckProblem {
  std::vector<GradBlock> blocks;
  /// Scalar objective at the current values.
  std::function<double()> loss;
  /// Adds d loss / d block into every block's grad (grads are zeroed first).
  std::function<void()> backward;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = true;
};

/// Central differences with step h over every entry of every block.
/// Per-entry error is |analytic - numeric| / max(|analytic|, |numeric|, floor);
/// the floor keeps near-zero gradients from turning round-off into large
/// relative errors. Passes iff the maximum is <= tolerance.
GradCheckReport gradient_check(const GradCheckProblem& problem, double tolerance, double h = 1e-5,
                               double floor = 1e-4);

/// Random projection weights for reducing a tensor output to a scalar loss.
Mat<double> probe_weights(Eigen::Index rows, Eigen::Index cols, Rng& rng);

}  // namespace avf::nn
