#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "avf/nn/tensor.hpp"

namespace avf::nn {

enum class OptimizerKind { sgd_momentum, adam };

/// How the step size shrinks with the step counter t (t = 0 on the first step):
///   time_based:  lr0 / (1 + decay * t)
///   exponential: lr0 * (1 - decay)^t
///   subtractive: max(0, lr0 - decay * t)
enum class LrSchedule { time_based, exponential, subtractive };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(LrSchedule s);
LrSchedule lr_schedule_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double lr0 = 0.003;
  double momentum = 0.5;
  double decay = 0.001;
  LrSchedule schedule = LrSchedule::time_based;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;

  double learning_rate(std::uint64_t t) const;
};

/// Slot buffers follow the parameter order of the model's ParamList:
/// sgd_momentum uses slot1 as velocity; adam uses slot1/slot2 as the first
/// and second moment estimates.
template <typename T>
struct OptimizerState {
  OptimizerConfig config;
  std::uint64_t t = 0;
  std::vector<Mat<T>> slot1;
  std::vector<Mat<T>> slot2;

  /// Zero slots shaped like `params`.
  void reset(const ParamList<T>& params);
};

/// One update of every parameter; increments t once.
///   sgd_momentum: v <- mu v - lr_t g;  theta <- theta + v
///   adam:         bias-corrected with step index t + 1
template <typename T>
void optimizer_step(const ParamList<T>& params, const ParamList<T>& grads, OptimizerState<T>& state);

}  // namespace avf::nn
