#include "avf/nn/loss.hpp"

#include <cmath>

#include "avf/error.hpp"

namespace avf::nn {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::mae: return "mae";
    case LossKind::ccc: return "ccc";
    case LossKind::ccc_plus_mse: return "ccc_plus_mse";
    case LossKind::ccc_plus_mae: return "ccc_plus_mae";
  }
  return "mae";
}

LossKind loss_kind_from_string(const std::string& s) {
  for (LossKind k : {LossKind::mse, LossKind::mae, LossKind::ccc, LossKind::ccc_plus_mse,
                     LossKind::ccc_plus_mae}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown loss kind '" + s + "'");
}

namespace {

using MatD = Mat<double>;

double mse(const MatD& p, const MatD& y, MatD& g) {
  const double N = static_cast<double>(p.size());
  const MatD d = p - y;
  g = (2.0 / N) * d;
  return d.squaredNorm() / N;
}

double mae(const MatD& p, const MatD& y, MatD& g) {
  const double N = static_cast<double>(p.size());
  const MatD d = p - y;
  g = d.unaryExpr([N](double v) { return v > 0 ? 1.0 / N : (v < 0 ? -1.0 / N : 0.0); });
  return d.cwiseAbs().sum() / N;
}

// Mean over columns of (1 - CCC). For one column with N rows, dx_i = x_i - mx,
// dy_i = y_i - my, num = 2 s_xy, den = s_xx + s_yy + (mx - my)^2:
//   d ccc / d x_i = (2 dy_i den - num (2 dx_i + 2 (mx - my))) / (N den^2).
double ccc_loss(const MatD& p, const MatD& y, MatD& g) {
  const Eigen::Index N = p.rows();
  if (N < 2) throw NumericalError("CCC loss needs a batch of at least 2");
  const double n = static_cast<double>(N);
  const double cols = static_cast<double>(p.cols());
  g.resize(p.rows(), p.cols());
  double total = 0.0;
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    const double mx = p.col(c).mean(), my = y.col(c).mean();
    const Eigen::VectorXd dx = p.col(c).array() - mx;
    const Eigen::VectorXd dy = y.col(c).array() - my;
    const double sxx = dx.squaredNorm() / n, syy = dy.squaredNorm() / n;
    if (sxx == 0.0) throw NumericalError("CCC loss: prediction column " + std::to_string(c) + " is constant");
    if (syy == 0.0) throw NumericalError("CCC loss: target column " + std::to_string(c) + " is constant");
    const double num = 2.0 * dx.dot(dy) / n;
    const double den = sxx + syy + (mx - my) * (mx - my);
    total += 1.0 - num / den;
    const Eigen::VectorXd dccc =
        (2.0 * dy.array() * den - num * (2.0 * dx.array() + 2.0 * (mx - my))) / (n * den * den);
    g.col(c) = -dccc / cols;
  }
  return total / cols;
}

}  // namespace

template <typename T>
LossResult<T> loss_eval(const Mat<T>& pred, const Mat<T>& truth, const LossSpec& spec) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw ConfigError("loss: prediction and target shapes differ");
  }
  if (pred.size() == 0) throw ConfigError("loss: empty batch");
  const MatD p = pred.template cast<double>();
  const MatD y = truth.template cast<double>();
  MatD g, g2;
  double v = 0.0;
  switch (spec.kind) {
    case LossKind::mse: v = mse(p, y, g); break;
    case LossKind::mae: v = mae(p, y, g); break;
    case LossKind::ccc: v = ccc_loss(p, y, g); break;
    case LossKind::ccc_plus_mse:
    case LossKind::ccc_plus_mae: {
      const double lam = spec.lambda;
      if (!(lam >= 0.0 && lam <= 1.0)) throw ConfigError("loss: lambda must lie in [0, 1]");
      const double c = ccc_loss(p, y, g);
      const double e = spec.kind == LossKind::ccc_plus_mse ? mse(p, y, g2) : mae(p, y, g2);
      v = lam * c + (1.0 - lam) * e;
      g = lam * g + (1.0 - lam) * g2;
      break;
    }
  }
  return {v, g.template cast<T>()};
}

template LossResult<float> loss_eval<float>(const Mat<float>&, const Mat<float>&, const LossSpec&);
template LossResult<double> loss_eval<double>(const Mat<double>&, const Mat<double>&, const LossSpec&);

}  // namespace avf::nn
