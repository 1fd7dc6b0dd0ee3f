#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "avf/error.hpp"
#include "avf/fusion.hpp"

namespace avf::fusion {

double rbf_kernel(std::span<const double> x, std::span<const double> y, double gamma) {
  if (x.size() != y.size()) throw ConfigError("rbf_kernel: dimension mismatch");
  if (!(gamma > 0.0)) throw ConfigError("rbf_kernel: gamma must be positive");
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

namespace {

constexpr double kTau = 1e-12;

std::span<const double> row_span(const Matrix& X, Eigen::Index i) {
  return {X.data() + i * X.cols(), static_cast<std::size_t>(X.cols())};
}

Eigen::MatrixXd gram(const Matrix& X, double gamma) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      K(i, j) = K(j, i) = rbf_kernel(row_span(X, i), row_span(X, j), gamma);
    }
  }
  return K;
}

}  // namespace

SvrModel svr_train(const Matrix& X, std::span<const double> y, const SvrParams& params) {
  const Eigen::Index n = X.rows();
  if (n < 2) throw ConfigError("svr_train: need at least 2 samples");
  if (static_cast<std::size_t>(n) != y.size()) throw ConfigError("svr_train: X and y differ in length");
  if (!(params.C > 0.0)) throw ConfigError("svr_train: C must be positive");
  if (!(params.epsilon >= 0.0)) throw ConfigError("svr_train: epsilon must be >= 0");
  const double gamma = params.gamma > 0.0 ? params.gamma : 1.0 / static_cast<double>(X.cols());
  const double C = params.C;
  const std::size_t max_iter =
      params.max_iter > 0 ? params.max_iter : std::max<std::size_t>(100000, 100 * static_cast<std::size_t>(n));

  const Eigen::MatrixXd K = gram(X, gamma);
  const Eigen::Index l = 2 * n;
  auto sign = [n](Eigen::Index t) { return t < n ? 1.0 : -1.0; };
  auto Q = [&](Eigen::Index s, Eigen::Index t) { return sign(s) * sign(t) * K(s % n, t % n); };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(l);
  Eigen::VectorXd p(l);
  for (Eigen::Index i = 0; i < n; ++i) {
    p(i) = params.epsilon - y[static_cast<std::size_t>(i)];
    p(i + n) = params.epsilon + y[static_cast<std::size_t>(i)];
  }
  Eigen::VectorXd G = p;

  auto in_up = [&](Eigen::Index t) { return sign(t) > 0 ? beta(t) < C : beta(t) > 0.0; };
  auto in_low = [&](Eigen::Index t) { return sign(t) > 0 ? beta(t) > 0.0 : beta(t) < C; };

  std::size_t iter = 0;
  double gap = 0.0;
  for (;; ++iter) {
    // Maximal violating pair: i maximizes -y G over I_up, j minimizes it over I_low.
    Eigen::Index i = -1, j = -1;
    double gmax = -std::numeric_limits<double>::infinity();
    double gmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < l; ++t) {
      const double v = -sign(t) * G(t);
      if (in_up(t) && v > gmax) gmax = v, i = t;
      if (in_low(t) && v < gmin) gmin = v, j = t;
    }
    gap = gmax - gmin;
    if (i < 0 || j < 0 || gap < params.tolerance) break;
    if (iter >= max_iter) {
      throw NumericalError("svr_train: no convergence after " + std::to_string(max_iter) +
                           " iterations, KKT violation " + std::to_string(gap));
    }

    const double old_i = beta(i), old_j = beta(j);
    const double Qij = Q(i, j);
    if (sign(i) != sign(j)) {
      double quad = Q(i, i) + Q(j, j) + 2.0 * Qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-G(i) - G(j)) / quad;
      const double diff = beta(i) - beta(j);
      beta(i) += delta;
      beta(j) += delta;
      if (diff > 0.0) {
        if (beta(j) < 0.0) beta(j) = 0.0, beta(i) = diff;
      } else if (beta(i) < 0.0) {
        beta(i) = 0.0, beta(j) = -diff;
      }
      if (diff > 0.0) {
        if (beta(i) > C) beta(i) = C, beta(j) = C - diff;
      } else if (beta(j) > C) {
        beta(j) = C, beta(i) = C + diff;
      }
    } else {
      double quad = Q(i, i) + Q(j, j) - 2.0 * Qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (G(i) - G(j)) / quad;
      const double sum = beta(i) + beta(j);
      beta(i) -= delta;
      beta(j) += delta;
      if (sum > C) {
        if (beta(i) > C) beta(i) = C, beta(j) = sum - C;
        if (beta(j) > C) beta(j) = C, beta(i) = sum - C;
      } else {
        if (beta(j) < 0.0) beta(j) = 0.0, beta(i) = sum;
        if (beta(i) < 0.0) beta(i) = 0.0, beta(j) = sum;
      }
    }
    const double di = beta(i) - old_i, dj = beta(j) - old_j;
    for (Eigen::Index t = 0; t < l; ++t) G(t) += Q(i, t) * di + Q(j, t) * dj;
  }

  // Bias: average over free variables, else the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
  int n_free = 0;
  for (Eigen::Index t = 0; t < l; ++t) {
    const double yG = sign(t) * G(t);
    if (beta(t) >= C) {
      if (sign(t) < 0) ub = std::min(ub, yG);
      else lb = std::max(lb, yG);
    } else if (beta(t) <= 0.0) {
      if (sign(t) > 0) ub = std::min(ub, yG);
      else lb = std::max(lb, yG);
    } else {
      ++n_free;
      sum_free += yG;
    }
  }
  const double rho = n_free > 0 ? sum_free / n_free : 0.5 * (ub + lb);

  SvrModel m;
  m.gamma = gamma;
  m.C = C;
  m.epsilon = params.epsilon;
  m.bias = -rho;
  m.iterations = iter;
  m.objective = 0.5 * beta.dot(G + p);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (beta(i) - beta(i + n) != 0.0) m.support.push_back(static_cast<std::size_t>(i));
  }
  const auto ns = static_cast<Eigen::Index>(m.support.size());
  m.support_vectors.resize(ns, X.cols());
  m.dual_coefs.resize(ns);
  for (Eigen::Index s = 0; s < ns; ++s) {
    const auto i = static_cast<Eigen::Index>(m.support[static_cast<std::size_t>(s)]);
    m.support_vectors.row(s) = X.row(i);
    m.dual_coefs(s) = beta(i) - beta(i + n);
  }
  return m;
}

double svr_predict(const SvrModel& model, std::span<const double> x) {
  if (model.support_vectors.rows() > 0 && static_cast<Eigen::Index>(x.size()) != model.support_vectors.cols()) {
    throw ConfigError("svr_predict: dimension mismatch");
  }
  double f = model.bias;
  for (Eigen::Index s = 0; s < model.support_vectors.rows(); ++s) {
    f += model.dual_coefs(s) * rbf_kernel(row_span(model.support_vectors, s), x, model.gamma);
  }
  return f;
}

Eigen::VectorXd svr_predict(const SvrModel& model, const Matrix& X) {
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = svr_predict(model, row_span(X, i));
  return out;
}

GridSearchResult grid_search_c(const Matrix& X, std::span<const double> y, const std::vector<double>& grid,
                               std::span<const int> fold_of_row, int k, const SvrParams& base, int jobs) {
  if (grid.empty()) throw ConfigError("grid_search_c: empty grid");
  if (fold_of_row.size() != static_cast<std::size_t>(X.rows()) || y.size() != fold_of_row.size()) {
    throw ConfigError("grid_search_c: X, y and folds differ in length");
  }
  std::vector<std::vector<Eigen::Index>> held(static_cast<std::size_t>(k)), kept(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const int f = fold_of_row[static_cast<std::size_t>(i)];
    if (f < 0 || f >= k) throw ConfigError("grid_search_c: fold index out of range");
    for (int g = 0; g < k; ++g) (g == f ? held : kept)[static_cast<std::size_t>(g)].push_back(i);
  }
  for (int f = 0; f < k; ++f) {
    if (held[static_cast<std::size_t>(f)].size() < 2) {
      throw DataError("grid_search_c: fold " + std::to_string(f) + " has fewer than 2 held-out points");
    }
  }

  const std::size_t nc = grid.size();
  const std::size_t ntask = nc * static_cast<std::size_t>(k);
  std::vector<std::vector<double>> preds(ntask);
  std::vector<std::exception_ptr> errors(ntask);
  auto run = [&](std::size_t task) {
    try {
      const std::size_t c = task / static_cast<std::size_t>(k), f = task % static_cast<std::size_t>(k);
      const auto& tr = kept[f];
      const auto& te = held[f];
      Matrix Xtr(static_cast<Eigen::Index>(tr.size()), X.cols());
      std::vector<double> ytr(tr.size());
      for (std::size_t r = 0; r < tr.size(); ++r) {
        Xtr.row(static_cast<Eigen::Index>(r)) = X.row(tr[r]);
        ytr[r] = y[static_cast<std::size_t>(tr[r])];
      }
      SvrParams p = base;
      p.C = grid[c];
      const SvrModel m = svr_train(Xtr, ytr, p);
      auto& out = preds[task];
      for (const auto i : te) out.push_back(svr_predict(m, row_span(X, i)));
    } catch (...) {
      errors[task] = std::current_exception();
    }
  };
  const std::size_t nthreads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, ntask);
  if (nthreads == 1) {
    for (std::size_t t = 0; t < ntask; ++t) run(t);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < nthreads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < ntask; t += nthreads) run(t);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  GridSearchResult r;
  r.candidates = grid;
  r.scores.assign(nc, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    for (std::size_t f = 0; f < static_cast<std::size_t>(k); ++f) {
      std::vector<double> truth;
      for (const auto i : held[f]) truth.push_back(y[static_cast<std::size_t>(i)]);
      r.scores[c] += metrics::ccc(preds[c * static_cast<std::size_t>(k) + f], truth);
    }
    r.scores[c] /= k;
  }
  r.chosen = 0;
  for (std::size_t c = 1; c < nc; ++c) {
    const bool better = r.scores[c] > r.scores[r.chosen];
    const bool tie_smaller = r.scores[c] == r.scores[r.chosen] && grid[c] < grid[r.chosen];
    if (better || tie_smaller) r.chosen = c;
  }
  r.chosen_c = grid[r.chosen];
  r.oof.assign(static_cast<std::size_t>(X.rows()), 0.0);
  for (std::size_t f = 0; f < static_cast<std::size_t>(k); ++f) {
    const auto& p = preds[r.chosen * static_cast<std::size_t>(k) + f];
    for (std::size_t q = 0; q < held[f].size(); ++q) r.oof[static_cast<std::size_t>(held[f][q])] = p[q];
  }
  return r;
}

}  // namespace avf::fusion
