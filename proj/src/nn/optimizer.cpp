#include "avf/nn/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "avf/error.hpp"

namespace avf::nn {

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::adam ? "adam" : "sgd_momentum";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd_momentum" || s == "sgd") return OptimizerKind::sgd_momentum;
  throw ConfigError("unknown optimizer '" + s + "'");
}

std::string to_string(LrSchedule s) {
  switch (s) {
    case LrSchedule::time_based: return "time_based";
    case LrSchedule::exponential: return "exponential";
    case LrSchedule::subtractive: return "subtractive";
  }
  return "time_based";
}

LrSchedule lr_schedule_from_string(const std::string& s) {
  for (auto v : {LrSchedule::time_based, LrSchedule::exponential, LrSchedule::subtractive}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown learning-rate schedule '" + s + "'");
}

double OptimizerConfig::learning_rate(std::uint64_t t) const {
  const double td = static_cast<double>(t);
  switch (schedule) {
    case LrSchedule::time_based: return lr0 / (1.0 + decay * td);
    case LrSchedule::exponential: return lr0 * std::pow(1.0 - decay, td);
    case LrSchedule::subtractive: return std::max(0.0, lr0 - decay * td);
  }
  return lr0;
}

template <typename T>
void OptimizerState<T>::reset(const ParamList<T>& params) {
  t = 0;
  slot1.clear();
  slot2.clear();
  for (const auto& [name, p] : params) {
    slot1.push_back(Mat<T>::Zero(p->rows(), p->cols()));
    if (config.kind == OptimizerKind::adam) slot2.push_back(Mat<T>::Zero(p->rows(), p->cols()));
  }
}

template <typename T>
void optimizer_step(const ParamList<T>& params, const ParamList<T>& grads, OptimizerState<T>& state) {
  if (params.size() != grads.size()) throw ConfigError("optimizer: parameter/gradient count mismatch");
  const auto& cfg = state.config;
  if (state.slot1.size() != params.size() ||
      (cfg.kind == OptimizerKind::adam && state.slot2.size() != params.size())) {
    const auto t = state.t;
    state.reset(params);
    state.t = t;
  }
  const T lr = static_cast<T>(cfg.learning_rate(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat<T>& p = *params[i].second;
    const Mat<T>& g = *grads[i].second;
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw ConfigError("optimizer: gradient shape mismatch for " + params[i].first);
    }
    if (cfg.kind == OptimizerKind::sgd_momentum) {
      Mat<T>& v = state.slot1[i];
      v = static_cast<T>(cfg.momentum) * v - lr * g;
      p += v;
    } else {
      Mat<T>& m = state.slot1[i];
      Mat<T>& s = state.slot2[i];
      const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
      m = b1 * m + (T(1) - b1) * g;
      s = b2 * s + (T(1) - b2) * g.cwiseAbs2();
      const double step = static_cast<double>(state.t + 1);
      const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, step));
      const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, step));
      const T eps = static_cast<T>(cfg.eps);
      p.array() -= lr * (m.array() / c1) / ((s.array() / c2).sqrt() + eps);
    }
  }
  ++state.t;
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void optimizer_step<float>(const ParamList<float>&, const ParamList<float>&, OptimizerState<float>&);
template void optimizer_step<double>(const ParamList<double>&, const ParamList<double>&,
                                     OptimizerState<double>&);

}  // namespace avf::nn
