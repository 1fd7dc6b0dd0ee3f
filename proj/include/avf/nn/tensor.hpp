#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "avf/rng.hpp"

namespace avf::nn {

/// Row-major dense matrix; rows are time steps or batch items.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Row = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Validity bit per row. An empty mask means every row is valid.
using Mask = std::vector<bool>;

inline bool is_valid(const Mask& m, Eigen::Index t) {
  return m.empty() || m[static_cast<std::size_t>(t)];
}

/// (name, tensor) pairs in a fixed, architecture-defined order.
template <typename T>
using ParamList = std::vector<std::pair<std::string, Mat<T>*>>;

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <typename T>
Mat<T> xavier_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                      Eigen::Index fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  return m;
}

template <typename T>
Mat<T> random_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(scale * rng.normal());
  return m;
}

template <typename T>
Mat<T> random_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(lo, hi));
  return m;
}

}  // namespace avf::nn
