#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

#include "avf/error.hpp"
#include "avf/selftest.hpp"

namespace avf::selftest {

namespace {

struct Moments {
  long double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
};

Moments moments(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw NumericalError("oracle: need equal lengths >= 2");
  Moments m;
  const auto n = static_cast<long double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m.mx += x[i];
    m.my += y[i];
  }
  m.mx /= n;
  m.my /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double dx = x[i] - m.mx, dy = y[i] - m.my;
    m.sxx += dx * dx;
    m.syy += dy * dy;
    m.sxy += dx * dy;
  }
  m.sxx /= n;
  m.syy /= n;
  m.sxy /= n;
  return m;
}

}  // namespace

double pearson_oracle(std::span<const double> x, std::span<const double> y) {
  const Moments m = moments(x, y);
  return static_cast<double>(m.sxy / std::sqrt(m.sxx * m.syy));
}

double ccc_oracle(std::span<const double> x, std::span<const double> y) {
  const Moments m = moments(x, y);
  const long double gap = m.mx - m.my;
  return static_cast<double>(2 * m.sxy / (m.sxx + m.syy + gap * gap));
}

QpSolution svr_qp_oracle(const fusion::Matrix& X, std::span<const double> y, double C, double epsilon,
                         double gamma, double tol, int max_iter) {
  const Eigen::Index n = X.rows();
  const Eigen::Index l = 2 * n;
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) K(i, j) = std::exp(-gamma * (X.row(i) - X.row(j)).squaredNorm());
  }
  Eigen::MatrixXd Q(l, l);
  Q << K, -K, -K, K;
  Eigen::VectorXd p(l), z(l);
  for (Eigen::Index i = 0; i < n; ++i) {
    p(i) = epsilon - y[static_cast<std::size_t>(i)];
    p(i + n) = epsilon + y[static_cast<std::size_t>(i)];
    z(i) = 1.0;
    z(i + n) = -1.0;
  }
  const double L = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Q, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double step = 1.0 / std::max(L, 1e-12);

  // Euclidean projection onto the box intersected with z'b = 0.
  auto project = [&](const Eigen::VectorXd& v) {
    auto at = [&](double lam) {
      return (v - lam * z).cwiseMax(0.0).cwiseMin(C).eval();
    };
    double lo = -(v.cwiseAbs().maxCoeff() + C), hi = -lo;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (z.dot(at(mid)) > 0.0) lo = mid;
      else hi = mid;
    }
    return at(0.5 * (lo + hi));
  };
  auto objective = [&](const Eigen::VectorXd& b) { return 0.5 * b.dot(Q * b) + p.dot(b); };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(l), yk = beta;
  double t = 1.0, f_prev = objective(beta);
  bool momentum = false;
  int it = 0;
  for (; it < max_iter; ++it) {
    const Eigen::VectorXd next = project(yk - step * (Q * yk + p));
    const double f_next = objective(next);
    const double change = (next - beta).cwiseAbs().maxCoeff();
    if (momentum && f_next > f_prev) {
      // Adaptive restart: drop momentum when the objective goes up.
      t = 1.0;
      yk = beta;
      momentum = false;
      continue;
    }
    momentum = true;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    yk = next + ((t - 1.0) / t_next) * (next - beta);
    beta = next;
    t = t_next;
    f_prev = f_next;
    if (change < tol) break;
  }

  QpSolution s;
  s.beta = beta;
  s.coefs = beta.head(n) - beta.tail(n);
  s.objective = objective(beta);
  s.iterations = it;

  const Eigen::VectorXd Kc = K * s.coefs;
  const double thr = 1e-7 * C;
  double lower = -std::numeric_limits<double>::infinity(), upper = -lower, sum_free = 0.0;
  int n_free = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double yi = y[static_cast<std::size_t>(i)];
    const double a = beta(i), as = beta(i + n);
    // alpha_i free: f_i = y_i - eps; alpha*_i free: f_i = y_i + eps.
    if (a > thr && a < C - thr) sum_free += yi - epsilon - Kc(i), ++n_free;
    if (as > thr && as < C - thr) sum_free += yi + epsilon - Kc(i), ++n_free;
    if (a <= thr) lower = std::max(lower, yi - epsilon - Kc(i));
    if (a >= C - thr) upper = std::min(upper, yi - epsilon - Kc(i));
    if (as <= thr) upper = std::min(upper, yi + epsilon - Kc(i));
    if (as >= C - thr) lower = std::max(lower, yi + epsilon - Kc(i));
  }
  s.bias = n_free > 0 ? sum_free / n_free : 0.5 * (lower + upper);
  return s;
}

double qp_predict(const QpSolution& s, const fusion::Matrix& X, double gamma, std::span<const double> x) {
  double f = s.bias;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double d2 = 0.0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double d = X(i, j) - x[static_cast<std::size_t>(j)];
      d2 += d * d;
    }
    f += s.coefs(i) * std::exp(-gamma * d2);
  }
  return f;
}

}  // namespace avf::selftest
