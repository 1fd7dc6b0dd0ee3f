#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "avf/dataio.hpp"
#include "avf/encoders.hpp"
#include "avf/metrics.hpp"

namespace avf::fusion {

using Matrix = data::FeatureMatrix;

/// exp(-gamma * |x - y|^2). Throws ConfigError on a length mismatch or gamma <= 0.
double rbf_kernel(std::span<const double> x, std::span<const double> y, double gamma);

struct SvrParams {
  double C = 1.0;
  double epsilon = 0.1;
  double gamma = 0.0;       // 0: 1 / n_features
  double tolerance = 1e-3;  // maximal KKT violation at termination
  std::size_t max_iter = 0; // 0: max(100000, 100 n)
};

struct SvrModel {
  Matrix support_vectors;            // m x d
  Eigen::VectorXd dual_coefs;        // alpha - alpha*, |coef| <= C
  std::vector<std::size_t> support;  // training-row index of each support vector
  double bias = 0.0;
  double gamma = 1.0;
  double C = 1.0;
  double epsilon = 0.1;
  // Solver diagnostics.
  double objective = 0.0;  // minimized dual: 1/2 b'Qb + p'b over the 2n variables
  std::size_t iterations = 0;
};

/// epsilon-SVR by SMO over the 2n-variable dual
///   min 1/2 b'Qb + p'b,  Q = [K -K; -K K],  p = [eps - y; eps + y],
///   0 <= b <= C,  sum(b[:n]) = sum(b[n:]),
/// choosing the maximal-violating pair each iteration. Throws NumericalError
/// with the remaining violation if max_iter is reached.
SvrModel svr_train(const Matrix& X, std::span<const double> y, const SvrParams& params);

double svr_predict(const SvrModel& model, std::span<const double> x);
Eigen::VectorXd svr_predict(const SvrModel& model, const Matrix& X);

// --- grid search --------------------------------------------------------------------

inline const std::vector<double> kDefaultGrid = {0.1, 0.3, 1.0, 3.0, 10.0, 30.0};

struct GridSearchResult {
  std::vector<double> candidates;
  std::vector<double> scores;  // mean held-out-fold CCC per candidate
  double chosen_c = 0.0;
  std::size_t chosen = 0;
  /// Out-of-fold predictions of the chosen candidate, in row order of X.
  std::vector<double> oof;
};

/// For each C: train on k-1 folds, CCC on the held-out fold, averaged over
/// folds. Chooses the argmax, ties to the smallest C. `fold_of_row[i]` is the
/// fold of row i. Independent fits run on up to `jobs` threads; results do
/// not depend on `jobs`.
GridSearchResult grid_search_c(const Matrix& X, std::span<const double> y, const std::vector<double>& grid,
                               std::span<const int> fold_of_row, int k, const SvrParams& base, int jobs = 1);

// --- late fusion ------------------------------------------------------------------

/// Representations of one encoder for the records of one split, ordered by
/// utterance_id.
struct RepresentationTable {
  std::string encoder;
  std::vector<std::string> ids;
  Matrix features;  // ids.size() x dim

  std::optional<std::size_t> row_of(const std::string& id) const;
};

/// Runs the encoder on every record of `split` that carries its modality.
RepresentationTable extract_table(const std::string& name, const enc::EncoderModel& model,
                                  const data::DatasetManifest& manifest, data::Split split);
void save_table(const std::filesystem::path& dir, const RepresentationTable& t);
RepresentationTable load_table(const std::filesystem::path& dir);

struct FusionConfig {
  /// Split the SVRs are cross-validated and fitted on. The held-out split is
  /// validation when fitting on train, and test otherwise.
  data::Split fit_split = data::Split::train;
  std::vector<double> grid = kDefaultGrid;
  double epsilon = 0.1;
  double gamma = 0.0;  // 0: 1 / concatenated dim
  double tolerance = 1e-3;
  bool zscore = true;
  int folds = 5;
  std::uint64_t seed = 0;
  int jobs = 1;
};

nlohmann::json to_json(const FusionConfig& c);
FusionConfig fusion_config_from_json(const nlohmann::json& j);

struct TargetFit {
  SvrModel svr;
  GridSearchResult grid;
};

struct FusionModel {
  std::vector<std::string> members;
  std::vector<Eigen::Index> member_dims;
  Eigen::RowVectorXd mean, scale;  // per concatenated dimension
  TargetFit arousal, valence;

  Eigen::Index dim() const { return mean.size(); }
  /// Concatenates (in member order) and scales one record's representations.
  Eigen::RowVectorXd features(const std::vector<std::span<const double>>& reps) const;
};

struct FusionResult {
  FusionModel model;
  metrics::ResultRow cv;                      // mean held-out-fold CCC at the chosen C
  std::optional<metrics::ResultRow> holdout;  // final model on the held-out split
  std::vector<std::string> fit_ids;           // rows of the fit split, sorted; order of the OOF vectors
};

/// Folds over the fit split, grouped by video and seeded from (seed,
/// "folds"), so every combination sees the same partition.
data::FoldAssignment fusion_folds(const data::DatasetManifest& manifest, const FusionConfig& cfg);

data::Split holdout_split(const FusionConfig& cfg);

/// Z-scores (unit-scale fallback on zero variance), concatenates members in
/// order, grid-searches C per target and refits on the whole fit split. Every
/// fit-split record must be present in every member table. With non-empty
/// `holdout_tables` the final model is also scored on the held-out split.
FusionResult fuse_train(const std::vector<const RepresentationTable*>& fit_tables,
                        const std::vector<const RepresentationTable*>& holdout_tables,
                        const data::DatasetManifest& manifest, const FusionConfig& cfg);

/// Predicted (arousal, valence) for one record.
std::pair<double, double> fusion_predict(const FusionModel& m, const std::vector<std::span<const double>>& reps);

void save_fusion(const std::filesystem::path& dir, const FusionModel& m);
FusionModel load_fusion(const std::filesystem::path& dir);

/// "A+B+C" -> {"A", "B", "C"}.
std::vector<std::string> parse_combination(const std::string& spec);
std::string combination_name(const std::vector<std::string>& members);

struct FusionReport {
  std::vector<metrics::ResultRow> rows;           // sorted by mean CCC, descending
  std::vector<FusionResult> results;              // same order as rows
  metrics::PccMatrix pcc_arousal, pcc_valence;    // over single-member out-of-fold predictions
};

/// Trains every combination and tabulates held-out CCC. Members are looked up
/// by encoder name in `fit_tables` / `holdout_tables`.
FusionReport fuse_evaluate(const std::vector<std::vector<std::string>>& combinations,
                           const std::vector<RepresentationTable>& fit_tables,
                           const std::vector<RepresentationTable>& holdout_tables,
                           const data::DatasetManifest& manifest, const FusionConfig& cfg);

nlohmann::json to_json(const FusionResult& r);

}  // namespace avf::fusion
