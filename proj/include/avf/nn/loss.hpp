#pragma once

#include <string>

#include "avf/nn/tensor.hpp"

namespace avf::nn {

enum class LossKind { mse, mae, ccc, ccc_plus_mse, ccc_plus_mae };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct LossSpec {
  LossKind kind = LossKind::mae;
  /// Weight of the CCC term in the combined kinds; ignored otherwise.
  double lambda = 0.5;

  bool uses_ccc() const { return kind != LossKind::mse && kind != LossKind::mae; }
};

template <typename T>
struct LossResult {
  double value = 0.0;
  Mat<T> grad;  // d value / d pred, same shape as pred
};

/// Loss over a batch x targets prediction matrix.
///   mse, mae: mean over every entry.
///   ccc:      mean over target columns of 1 - CCC(pred_col, truth_col), with
///             population moments over the batch.
///   ccc_plus_*: lambda * ccc + (1 - lambda) * (mse | mae).
/// CCC-containing kinds need batch >= 2 and non-constant pred and truth
/// columns; violations throw NumericalError. The MAE subgradient at an exact
/// tie is 0.
template <typename T>
LossResult<T> loss_eval(const Mat<T>& pred, const Mat<T>& truth, const LossSpec& spec);

}  // namespace avf::nn
