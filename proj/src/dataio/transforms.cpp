#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "avf/dataio.hpp"
#include "avf/error.hpp"

namespace avf::data {

namespace {

FeatureSequence gather_rows(const FeatureSequence& seq, const std::vector<Eigen::Index>& rows) {
  FeatureMatrix out(static_cast<Eigen::Index>(rows.size()), seq.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = seq.data.row(rows[i]);
  }
  return FeatureSequence(std::move(out), seq.rank);
}

// floor(i * n / target + 1/2) in exact integer arithmetic.
Eigen::Index stride_index(std::size_t i, std::size_t n, std::size_t target) {
  return static_cast<Eigen::Index>((2 * i * n + target) / (2 * target));
}

}  // namespace

Eigen::Index MaskedSequence::valid_count() const {
  return static_cast<Eigen::Index>(std::count(mask.begin(), mask.end(), true));
}

FeatureSequence downsample_every_k(const FeatureSequence& seq, std::size_t k) {
  if (k == 0) throw ConfigError("downsample factor must be >= 1");
  if (k == 1) return seq;
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < seq.frames(); i += static_cast<Eigen::Index>(k)) rows.push_back(i);
  return gather_rows(seq, rows);
}

FeatureSequence ssa_sample(const FeatureSequence& seq, std::size_t chunk, Rng& rng) {
  if (chunk == 0) throw ConfigError("SSA chunk must be >= 1");
  if (chunk == 1) return seq;
  const auto n = static_cast<std::size_t>(seq.frames());
  std::vector<Eigen::Index> rows;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    rows.push_back(static_cast<Eigen::Index>(start + rng.uniform_index(len)));
  }
  return gather_rows(seq, rows);
}

FeatureSequence csa_sample(const FeatureSequence& seq, std::size_t window, Rng& rng) {
  if (window == 0) throw ConfigError("CSA window must be >= 1");
  const auto n = static_cast<std::size_t>(seq.frames());
  if (n <= window) return seq;
  const auto start = static_cast<Eigen::Index>(rng.uniform_index(n - window + 1));
  return FeatureSequence(seq.data.middleRows(start, static_cast<Eigen::Index>(window)), seq.rank);
}

MaskedSequence pad_truncate(const FeatureSequence& seq, std::size_t target_frames) {
  MaskedSequence m{seq.data, std::vector<bool>(static_cast<std::size_t>(seq.frames()), true)};
  return pad_truncate(m, target_frames);
}

MaskedSequence pad_truncate(const MaskedSequence& seq, std::size_t target_frames) {
  if (target_frames == 0) throw ConfigError("target frame count must be >= 1");
  const auto n = static_cast<std::size_t>(seq.data.rows());
  const auto T = static_cast<Eigen::Index>(target_frames);
  MaskedSequence out;
  if (n == target_frames) return seq;
  if (n < target_frames) {
    out.data = FeatureMatrix::Zero(T, seq.data.cols());
    out.data.topRows(static_cast<Eigen::Index>(n)) = seq.data;
    out.mask = seq.mask;
    out.mask.resize(target_frames, false);
    return out;
  }
  out.data.resize(T, seq.data.cols());
  out.mask.resize(target_frames);
  for (std::size_t i = 0; i < target_frames; ++i) {
    const Eigen::Index src = stride_index(i, n, target_frames);
    out.data.row(static_cast<Eigen::Index>(i)) = seq.data.row(src);
    out.mask[i] = seq.mask[static_cast<std::size_t>(src)];
  }
  return out;
}

// --- selection ---------------------------------------------------------------

namespace {

// |Pearson| with population moments; 0 when either side is constant.
double abs_pearson(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
  const double n = static_cast<double>(x.size());
  const Eigen::VectorXd dx = x.array() - x.sum() / n;
  const Eigen::VectorXd dy = y.array() - y.sum() / n;
  const double sxx = dx.squaredNorm();
  const double syy = dy.squaredNorm();
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::abs(dx.dot(dy)) / std::sqrt(sxx * syy);
}

std::vector<std::size_t> top_k(const std::vector<double>& score, std::size_t k) {
  std::vector<std::size_t> idx(score.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  idx.resize(k);
  return idx;
}

void check_selection_args(const FeatureMatrix& X, Eigen::Index n, std::size_t k) {
  if (X.rows() < 2) throw ConfigError("feature selection needs at least 2 samples");
  if (X.rows() != n) throw ConfigError("feature selection: X and y row counts differ");
  if (k == 0 || k > static_cast<std::size_t>(X.cols())) {
    throw ConfigError("feature selection: k must be in [1, d]");
  }
}

}  // namespace

std::vector<std::size_t> select_features(const FeatureMatrix& X, std::span<const double> y,
                                         std::size_t k) {
  FeatureMatrix Y(static_cast<Eigen::Index>(y.size()), 1);
  for (std::size_t i = 0; i < y.size(); ++i) Y(static_cast<Eigen::Index>(i), 0) = y[i];
  return select_features(X, Y, k);
}

std::vector<std::size_t> select_features(const FeatureMatrix& X, const FeatureMatrix& Y,
                                         std::size_t k) {
  check_selection_args(X, Y.rows(), k);
  std::vector<double> score(static_cast<std::size_t>(X.cols()), 0.0);
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    double s = 0.0;
    for (Eigen::Index t = 0; t < Y.cols(); ++t) s += abs_pearson(X.col(j), Y.col(t));
    score[static_cast<std::size_t>(j)] = s / static_cast<double>(Y.cols());
  }
  return top_k(score, k);
}

// --- folds -------------------------------------------------------------------

std::vector<std::size_t> FoldAssignment::fold_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (const auto& [id, f] : fold_of) ++sizes[static_cast<std::size_t>(f)];
  return sizes;
}

FoldAssignment kfold_split(std::span<const std::string> ids, std::span<const std::string> groups,
                           int k, std::uint64_t seed) {
  if (ids.size() != groups.size()) throw ConfigError("kfold_split: ids and groups differ in length");
  if (k < 1) throw ConfigError("kfold_split: k must be >= 1");
  if (static_cast<std::size_t>(k) > ids.size()) {
    throw ConfigError("kfold_split: k exceeds the number of ids");
  }

  // Canonical group order first, so the result depends on content, not input order.
  std::map<std::string, std::vector<std::string>> members;
  for (std::size_t i = 0; i < ids.size(); ++i) members[groups[i]].push_back(ids[i]);
  if (static_cast<std::size_t>(k) > members.size()) {
    throw ConfigError("kfold_split: k=" + std::to_string(k) + " exceeds the " +
                      std::to_string(members.size()) + " distinct groups");
  }
  std::vector<const std::vector<std::string>*> order;
  for (auto& [g, v] : members) {
    std::sort(v.begin(), v.end());
    order.push_back(&v);
  }
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_index(i)]);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->size() > b->size(); });

  FoldAssignment fa;
  fa.k = k;
  std::vector<std::size_t> load(static_cast<std::size_t>(k), 0);
  std::set<std::string> seen;
  for (const auto* group : order) {
    const auto f = static_cast<int>(std::min_element(load.begin(), load.end()) - load.begin());
    for (const auto& id : *group) {
      if (!seen.insert(id).second) throw ConfigError("kfold_split: duplicate id '" + id + "'");
      fa.fold_of[id] = f;
    }
    load[static_cast<std::size_t>(f)] += group->size();
  }
  return fa;
}

FoldAssignment kfold_split(std::span<const std::string> ids, int k, std::uint64_t seed) {
  return kfold_split(ids, ids, k, seed);
}

}  // namespace avf::data
