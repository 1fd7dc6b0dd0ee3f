#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "avf/encoders.hpp"
#include "avf/fusion.hpp"

// Pipeline commands behind the `avf` executable. Each returns a process exit
// code and writes human-readable progress to `out` and diagnostics to `err`.
//
// Run directory layout:
//   encoders/<name>/           checkpoint, config.json, history.tsv, evaluation.json
//   representations/<name>/<split>/   ids.json, features.aff1
//   fusions/<A+B>/             fusion.json, row.json
//   report/                    table.txt, table.json, pcc_arousal.csv, pcc_valence.csv
//   ablations/                 <study>.txt, <study>.json

namespace avf::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2 };

struct RunConfig {
  fs::path manifest;
  fs::path out;
  std::vector<fs::path> configs;
  std::vector<std::string> combinations;
  /// When set, every encoder seed is derive_seed(seed, "encoder:" + name) and
  /// the fusion seed is derive_seed(seed, "fusion"); otherwise the seeds in the
  /// config files are used as written.
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  enc::Precision precision = enc::Precision::f32;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
};

/// Maps DataError/ConfigError to 1 and NumericalError to 2, printing the message.
int run_guarded(const Io& io, const std::string& command, const std::function<int()>& body);

int cmd_validate(const fs::path& manifest, const Io& io);
/// Trains one encoder per config file, up to `jobs` at a time.
int cmd_train(const RunConfig& run, const Io& io);
/// Representation tables for every trained encoder, train and validation splits.
int cmd_extract(const RunConfig& run, const Io& io);
/// Fits each combination, plus the single-member fusion of every member so
/// the report has a single-modal row per encoder. No combinations: every
/// encoder alone and all encoders together. `configs` may hold one fusion
/// config file.
int cmd_fuse(const RunConfig& run, const Io& io);
int cmd_report(const fs::path& run_dir, const Io& io);

struct SynthCommand {
  fs::path out;
  std::uint64_t seed = 0;
  int train = 200, validation = 50;
  int wave_length = 0;
  double frame_noise = 1.0;
};
int cmd_synth(const SynthCommand& c, const Io& io);

struct SelftestCommand {
  std::uint64_t seed = 0;
  bool inject_gradient_fault = false;
};
int cmd_selftest(const SelftestCommand& c, const Io& io);

/// Loss, augmentation and independent vs multi-task studies of one base
/// encoder config. Values are validation CCC at each variant's best epoch.
int cmd_ablate(const RunConfig& run, const Io& io);

// --- pieces shared with the tests -----------------------------------------------------

/// Validation metrics of a trained encoder; targets it does not predict are
/// absent.
metrics::MetricsReport evaluate_encoder(const enc::EncoderModel& model, const data::DatasetManifest& manifest,
                                        data::Split split);

/// Directory name of a combination: members joined with '+'.
std::string combination_dir(const std::vector<std::string>& members);

struct AblationTable {
  std::string study;         // "loss", "augmentation", "multitask"
  std::string title;
  std::string label_header;  // first column
  std::vector<metrics::ResultRow> rows;
};

/// Runs the three studies; `base` supplies everything but the varied field.
std::vector<AblationTable> run_ablations(const enc::EncoderConfig& base, const data::DatasetManifest& manifest,
                                         enc::Precision precision, int jobs);

}  // namespace avf::cli
