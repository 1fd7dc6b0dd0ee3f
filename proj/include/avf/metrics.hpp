#pragma once

#include <Eigen/Core>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace avf::metrics {

// All moments are population moments (divide by N).

/// cov(x, y) / (sd_x sd_y). Throws NumericalError when n < 2, lengths differ,
/// or either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);

/// Lin's concordance: 2 cov / (var_x + var_y + (mean_x - mean_y)^2).
/// Throws NumericalError when n < 2 or the denominator is zero.
double ccc(std::span<const double> x, std::span<const double> y);

struct ErrorMetrics {
  double mse = 0.0;
  double mae = 0.0;
};

ErrorMetrics error_metrics(std::span<const double> x, std::span<const double> y);

struct TargetMetrics {
  double ccc = 0.0;
  std::optional<double> pcc;  // absent when predictions are constant
  double mse = 0.0;
  double mae = 0.0;
};

struct MetricsReport {
  std::map<std::string, TargetMetrics> targets;  // "arousal", "valence"
  std::size_t n = 0;
};

TargetMetrics evaluate_target(std::span<const double> pred, std::span<const double> truth);

nlohmann::json to_json(const MetricsReport& r);

/// Pairwise Pearson correlations between model prediction vectors. A cell
/// involving a constant vector is undefined: NaN in M and false in `defined`.
struct PccMatrix {
  std::vector<std::string> labels;
  Eigen::MatrixXd M;
  std::vector<std::vector<bool>> defined;
};

PccMatrix pcc_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& predictions);

/// Comma-separated with a header row of labels and a label column. Undefined
/// cells are written as "nan".
std::string to_csv(const PccMatrix& m);
nlohmann::json to_json(const PccMatrix& m);

/// One row of a single- or multi-modal results table.
struct ResultRow {
  std::string name;
  double arousal = 0.0;
  double valence = 0.0;
  double mean() const { return 0.5 * (arousal + valence); }
};

/// Aligned text table: a label column headed `label_header`, then arousal and
/// valence CCC, then the mean when `with_mean` is set. Values to 3 decimals.
std::string format_table(const std::string& title, const std::string& label_header,
                         const std::vector<ResultRow>& rows, bool with_mean);

/// {"title", "columns", "rows": [{"name", "arousal", "valence"[, "mean"]}]}.
nlohmann::json table_json(const std::string& title, const std::string& label_header,
                          const std::vector<ResultRow>& rows, bool with_mean);

}  // namespace avf::metrics
