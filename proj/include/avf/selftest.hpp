#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "avf/fusion.hpp"
#include "avf/nn/gradcheck.hpp"

// Property suites shared by `avf selftest` and the acceptance runner. Every
// suite recomputes its expectations with an independent oracle.

namespace avf::selftest {

struct SuiteResult {
  std::string name;
  bool passed = true;
  double max_error = 0.0;  // suite-specific worst deviation
  std::size_t cases = 0;
  double seconds = 0.0;
  std::string detail;      // first failure, or a summary
};

struct Options {
  std::uint64_t seed = 0;
  int seeds_per_layer = 20;
  int svr_instances = 50;
  /// SMO stopping tolerance in the oracle comparison. A KKT gap of tol only
  /// bounds predictions to a small multiple of tol, so this sits below the
  /// 1e-3 comparison tolerance.
  double svr_solver_tolerance = 1e-4;
  int augmentation_cases = 100;
  /// Doubles one analytic gradient in the dense check (test hook).
  bool inject_gradient_fault = false;
};

/// ccc / pearson against long-double direct formulas on 200 random pairs,
/// plus the worked examples.
SuiteResult metric_suite(const Options& o);

/// Central-difference checks of every layer, loss and architecture.
SuiteResult gradient_suite(const Options& o);

/// SMO against the projected-gradient QP oracle, plus KKT conditions.
SuiteResult svr_suite(const Options& o);

/// SSA/CSA/downsample/pad laws and bitwise mask invariance of every encoder.
SuiteResult augmentation_suite(const Options& o);

std::vector<SuiteResult> run_all(const Options& o);

/// Tiny configuration of an architecture for exhaustive finite differences.
enc::EncoderConfig toy_config(enc::Arch arch, std::uint64_t seed);
/// End-to-end gradient check of one toy network (2 frames / 2 tokens).
nn::GradCheckReport check_encoder(enc::Arch arch, std::uint64_t seed, double tol);

// --- oracles ------------------------------------------------------------------------

/// Two-pass long-double evaluations of the population-moment formulas.
double pearson_oracle(std::span<const double> x, std::span<const double> y);
double ccc_oracle(std::span<const double> x, std::span<const double> y);

struct QpSolution {
  Eigen::VectorXd beta;   // [alpha; alpha*]
  Eigen::VectorXd coefs;  // alpha - alpha*
  double objective = 0.0; // 1/2 b'Qb + p'b
  double bias = 0.0;
  int iterations = 0;
};

/// Accelerated projected gradient on the epsilon-SVR dual. The projection
/// onto {0 <= b <= C} intersected with {sum alpha = sum alpha*} bisects on
/// the hyperplane multiplier. Runs until successive iterates differ by less
/// than `tol` (max norm).
QpSolution svr_qp_oracle(const fusion::Matrix& X, std::span<const double> y, double C, double epsilon,
                         double gamma, double tol = 1e-10, int max_iter = 2000000);

/// f(x) = sum coefs_i k(x_i, x) + bias with an explicit loop.
double qp_predict(const QpSolution& s, const fusion::Matrix& X, double gamma, std::span<const double> x);

}  // namespace avf::selftest
