#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avf/rng.hpp"

namespace avf::data {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// frames x dim matrix of per-frame features for one utterance. Values come
/// from single-precision files, so they are always exactly representable as
/// float. `rank` records whether the source tensor was a vector (1) or a
/// matrix (2); a rank-1 tensor of length d loads as a 1 x d sequence.
struct FeatureSequence {
  FeatureMatrix data;
  std::uint8_t rank = 2;

  FeatureSequence() = default;
  explicit FeatureSequence(FeatureMatrix m, std::uint8_t r = 2) : data(std::move(m)), rank(r) {}

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }

  /// Throws DataError unless frames >= 1, dim >= 1 and all entries finite.
  void validate() const;
};

/// Sequence plus a validity bit per row (true = real frame, false = padding).
struct MaskedSequence {
  FeatureMatrix data;
  std::vector<bool> mask;

  Eigen::Index valid_count() const;
};

enum class Split { train, validation, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct LabelRanges {
  double arousal_min = 0.0;
  double arousal_max = 1.0;
  double valence_min = -1.0;
  double valence_max = 1.0;

  bool operator==(const LabelRanges&) const = default;
};

enum class Modality { visual, audio_vec, audio_wave, text_emb };

inline constexpr std::array<Modality, 4> kAllModalities = {
    Modality::visual, Modality::audio_vec, Modality::audio_wave, Modality::text_emb};

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

/// One labeled utterance. Modality references are paths relative to the
/// manifest's directory; tensors are loaded on demand.
struct UtteranceRecord {
  std::string utterance_id;
  std::string video_id;
  std::optional<std::string> visual;
  std::optional<std::string> audio_vec;
  std::optional<std::string> audio_wave;
  std::optional<std::string> text_emb;
  double arousal = 0.0;
  double valence = 0.0;
  Split split = Split::train;

  const std::optional<std::string>& ref(Modality m) const;
  std::optional<std::string>& ref(Modality m);
  bool has(Modality m) const { return ref(m).has_value(); }

  bool operator==(const UtteranceRecord&) const = default;
};

struct DatasetManifest {
  std::vector<UtteranceRecord> records;
  LabelRanges label_ranges;
  std::filesystem::path base_dir;
  bool has_header = false;

  /// Absolute path of a record's modality tensor. Throws if absent.
  std::filesystem::path resolve(const UtteranceRecord& r, Modality m) const;
  FeatureSequence load(const UtteranceRecord& r, Modality m) const;

  std::vector<const UtteranceRecord*> in_split(Split s) const;
};

/// Parses a JSON-lines manifest. Line numbers in errors are 1-based.
/// Validates unique ids, label ranges, at least one modality per record and
/// that each referenced file exists. Tensor payloads are not read.
DatasetManifest parse_manifest(const std::filesystem::path& path);

/// Writes the header line (if `m.has_header` or ranges differ from the
/// defaults) followed by one record per line.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

/// Reads an AFF1 tensor: "AFF1", rank byte, rank x u32le dims, f32le payload.
FeatureSequence read_feature_tensor(const std::filesystem::path& path);
void write_feature_tensor(const std::filesystem::path& path, const FeatureSequence& seq);

// --- frame transforms -------------------------------------------------------

/// Rows 0, k, 2k, ...; length ceil(frames / k).
FeatureSequence downsample_every_k(const FeatureSequence& seq, std::size_t k);

/// One uniformly drawn row per consecutive chunk; a short trailing chunk
/// still contributes a row.
FeatureSequence ssa_sample(const FeatureSequence& seq, std::size_t chunk, Rng& rng);

/// Contiguous window of `window` rows at a uniform offset; shorter inputs
/// are returned whole.
FeatureSequence csa_sample(const FeatureSequence& seq, std::size_t window, Rng& rng);

/// Exactly `target_frames` rows. Short inputs are zero-padded at the end and
/// masked; long inputs are subsampled at rows round(i * n / target).
MaskedSequence pad_truncate(const FeatureSequence& seq, std::size_t target_frames);
MaskedSequence pad_truncate(const MaskedSequence& seq, std::size_t target_frames);

// --- supervised feature selection -------------------------------------------

/// The k columns of X with largest |Pearson(X[:, j], y)|; ties go to the lower
/// index and constant columns score 0. Indices are returned in rank order.
std::vector<std::size_t> select_features(const FeatureMatrix& X, std::span<const double> y,
                                         std::size_t k);

/// Multi-target variant: a column's score is the mean |Pearson| over the
/// columns of Y.
std::vector<std::size_t> select_features(const FeatureMatrix& X, const FeatureMatrix& Y,
                                         std::size_t k);

// --- cross-validation folds -------------------------------------------------

struct FoldAssignment {
  std::map<std::string, int> fold_of;
  int k = 0;

  std::vector<std::size_t> fold_sizes() const;
};

/// Grouped k-fold assignment. Groups (videos) are shuffled with `seed`, then
/// taken largest first and each is placed in the currently smallest fold
/// (lowest index on ties). With singleton groups this is exactly round-robin
/// over the shuffled order, so fold sizes differ by at most one.
FoldAssignment kfold_split(std::span<const std::string> ids, std::span<const std::string> groups,
                           int k, std::uint64_t seed);

/// Every id is its own group.
FoldAssignment kfold_split(std::span<const std::string> ids, int k, std::uint64_t seed);

}  // namespace avf::data
