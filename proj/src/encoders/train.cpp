#include <algorithm>
#include <cmath>
#include <numeric>

#include "avf/encoders.hpp"
#include "avf/error.hpp"
#include "avf/metrics.hpp"

namespace avf::enc {

using nn::Mat;
using nn::Row;

namespace {

struct Sample {
  const data::UtteranceRecord* record;
  data::FeatureSequence raw;
  std::vector<double> target;
};

std::vector<double> targets_of(const EncoderConfig& c, const data::UtteranceRecord& r) {
  std::vector<double> t;
  if (c.predicts_arousal()) t.push_back(r.arousal);
  if (c.predicts_valence()) t.push_back(r.valence);
  return t;
}

std::vector<Sample> load_split(const EncoderConfig& c, const data::DatasetManifest& manifest, data::Split s) {
  auto recs = manifest.in_split(s);
  std::sort(recs.begin(), recs.end(),
            [](const auto* a, const auto* b) { return a->utterance_id < b->utterance_id; });
  const auto m = modality_of(c.arch);
  std::vector<Sample> out;
  for (const auto* r : recs) {
    if (!r->has(m)) continue;
    out.push_back({r, manifest.load(*r, m), targets_of(c, *r)});
  }
  return out;
}

// Feature selection and z-scoring for aud_mlp, fitted on the training split.
Preprocessor fit_preprocessor(const EncoderConfig& c, const std::vector<Sample>& train) {
  Preprocessor pre;
  if (c.arch != Arch::aud_mlp || (c.feature_select == 0 && !c.standardize)) return pre;
  const auto n = static_cast<Eigen::Index>(train.size());
  const Eigen::Index d = train.front().raw.dim();
  data::FeatureMatrix X(n, d);
  data::FeatureMatrix Y(n, c.output_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = train[static_cast<std::size_t>(i)];
    if (s.raw.frames() != 1 || s.raw.dim() != d) {
      throw DataError(s.record->utterance_id + ": audio feature vectors must share one length");
    }
    X.row(i) = s.raw.data.row(0);
    for (std::size_t j = 0; j < s.target.size(); ++j) Y(i, static_cast<Eigen::Index>(j)) = s.target[j];
  }
  if (c.feature_select > 0) {
    if (c.feature_select > d) throw DataError("feature_select exceeds the audio feature length");
    pre.selected = data::select_features(X, Y, static_cast<std::size_t>(c.feature_select));
    data::FeatureMatrix Xs(n, static_cast<Eigen::Index>(pre.selected.size()));
    for (std::size_t j = 0; j < pre.selected.size(); ++j) {
      Xs.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(pre.selected[j]));
    }
    X = std::move(Xs);
  }
  if (c.standardize) {
    pre.mean = X.colwise().mean();
    pre.stdev = ((X.rowwise() - pre.mean).array().square().colwise().mean()).sqrt();
    for (Eigen::Index j = 0; j < pre.stdev.size(); ++j) {
      if (!(pre.stdev(j) > 0.0)) pre.stdev(j) = 1.0;
    }
  }
  return pre;
}

std::optional<double> safe_ccc(const std::vector<double>& p, const std::vector<double>& y) {
  try {
    return metrics::ccc(p, y);
  } catch (const NumericalError&) {
    return std::nullopt;
  }
}

// CCC per predicted target column, mapped onto (arousal, valence).
std::pair<std::optional<double>, std::optional<double>> target_cccs(const EncoderConfig& c,
                                                                    const std::vector<std::vector<double>>& pred,
                                                                    const std::vector<std::vector<double>>& truth) {
  std::pair<std::optional<double>, std::optional<double>> out;
  std::size_t col = 0;
  if (c.predicts_arousal()) out.first = safe_ccc(pred[col], truth[col]), ++col;
  if (c.predicts_valence()) out.second = safe_ccc(pred[col], truth[col]);
  return out;
}

template <typename T>
void copy_params(Network<T>& dst, Network<T>& src) {
  auto d = dst.parameters();
  auto s = src.parameters();
  for (std::size_t i = 0; i < d.size(); ++i) *d[i].second = *s[i].second;
}

}  // namespace

template <typename T>
TrainedEncoder<T> train_encoder(TrainedEncoder<T> model, const data::DatasetManifest& manifest) {
  const EncoderConfig& c = model.config();
  c.validate();
  const auto train = load_split(c, manifest, data::Split::train);
  const auto val = load_split(c, manifest, data::Split::validation);
  if (train.empty()) throw DataError("encoder '" + c.name + "': no training records carry its modality");

  model.preprocessor() = fit_preprocessor(c, train);
  const Preprocessor& pre = model.preprocessor();
  Network<T>& net = model.network();
  auto& opt = model.optimizer_state();
  const auto params = net.parameters();
  const auto out_dim = static_cast<std::size_t>(c.output_dim());

  std::vector<Mat<T>> val_inputs;
  for (const auto& s : val) val_inputs.push_back(compact<T>(prepare_eval(c, pre, s.raw)));
  std::vector<std::vector<double>> val_truth(out_dim);
  for (const auto& s : val) {
    for (std::size_t j = 0; j < out_dim; ++j) val_truth[j].push_back(s.target[j]);
  }

  History history;
  std::unique_ptr<Network<T>> best;
  nn::OptimizerState<T> best_opt = opt;
  double best_score = -std::numeric_limits<double>::infinity();
  const std::size_t n = train.size();
  const auto bs = static_cast<std::size_t>(c.batch_size);

  for (int epoch = 1; epoch <= c.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(c.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.uniform_index(i)]);

    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t b = 0; b < n; b += bs) batches.emplace_back(b, std::min(n, b + bs));
    // A CCC batch needs two samples; fold a trailing singleton into its predecessor.
    if (c.loss.uses_ccc() && batches.size() > 1 && batches.back().second - batches.back().first == 1) {
      batches.pop_back();
      batches.back().second = n;
    }

    std::vector<std::vector<double>> tr_pred(out_dim), tr_truth(out_dim);
    double loss_sum = 0.0;
    for (const auto& [b0, b1] : batches) {
      const auto B = static_cast<Eigen::Index>(b1 - b0);
      Mat<T> pred(B, static_cast<Eigen::Index>(out_dim));
      Mat<T> truth(B, static_cast<Eigen::Index>(out_dim));
      std::vector<std::unique_ptr<Tape>> tapes(static_cast<std::size_t>(B));
      for (Eigen::Index i = 0; i < B; ++i) {
        const Sample& s = train[order[b0 + static_cast<std::size_t>(i)]];
        Rng aug(derive_seed(c.seed, "augment:" + s.record->utterance_id, static_cast<std::uint64_t>(epoch)));
        const auto x = compact<T>(prepare_train(c, pre, s.raw, aug));
        pred.row(i) = net.forward(x, &tapes[static_cast<std::size_t>(i)]).prediction;
        for (std::size_t j = 0; j < out_dim; ++j) truth(i, static_cast<Eigen::Index>(j)) = static_cast<T>(s.target[j]);
      }
      nn::LossResult<T> loss;
      try {
        loss = nn::loss_eval(pred, truth, c.loss);
      } catch (const NumericalError& e) {
        throw NumericalError("encoder '" + c.name + "' epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(loss.value) || !pred.allFinite()) {
        throw NumericalError("encoder '" + c.name + "' diverged at epoch " + std::to_string(epoch) +
                             ": non-finite loss");
      }
      loss_sum += loss.value * static_cast<double>(B);
      for (Eigen::Index i = 0; i < B; ++i) {
        for (std::size_t j = 0; j < out_dim; ++j) {
          tr_pred[j].push_back(static_cast<double>(pred(i, static_cast<Eigen::Index>(j))));
          tr_truth[j].push_back(static_cast<double>(truth(i, static_cast<Eigen::Index>(j))));
        }
      }

      auto grad = net.zeros_like();
      for (Eigen::Index i = 0; i < B; ++i) {
        net.backward(*tapes[static_cast<std::size_t>(i)], Row<T>(loss.grad.row(i)), *grad);
      }
      nn::optimizer_step(params, grad->parameters(), opt);
    }

    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(n);
    std::tie(row.train_ccc_arousal, row.train_ccc_valence) = target_cccs(c, tr_pred, tr_truth);

    if (!val.empty()) {
      std::vector<std::vector<double>> vp(out_dim);
      for (const auto& x : val_inputs) {
        const auto p = net.forward(x, nullptr).prediction;
        for (std::size_t j = 0; j < out_dim; ++j) vp[j].push_back(static_cast<double>(p(static_cast<Eigen::Index>(j))));
      }
      std::tie(row.val_ccc_arousal, row.val_ccc_valence) = target_cccs(c, vp, val_truth);
      double sum = 0.0;
      int cnt = 0;
      if (c.predicts_arousal()) sum += row.val_ccc_arousal.value_or(-1.0), ++cnt;
      if (c.predicts_valence()) sum += row.val_ccc_valence.value_or(-1.0), ++cnt;
      const double score = sum / cnt;
      if (score > best_score) {
        best_score = score;
        history.best_epoch = epoch;
        best = net.clone();
        best_opt = opt;
      }
    } else {
      history.best_epoch = epoch;
    }
    history.rows.push_back(row);
  }

  if (best && history.best_epoch != c.epochs) {
    copy_params(net, *best);
    opt = best_opt;
  }
  model.mutable_history() = std::move(history);
  return model;
}

template TrainedEncoder<float> train_encoder<float>(TrainedEncoder<float>, const data::DatasetManifest&);
template TrainedEncoder<double> train_encoder<double>(TrainedEncoder<double>, const data::DatasetManifest&);

std::unique_ptr<EncoderModel> train_encoder(const EncoderConfig& config, const data::DatasetManifest& manifest,
                                            Precision precision) {
  if (precision == Precision::f32) {
    return std::make_unique<TrainedEncoder<float>>(train_encoder(build_encoder<float>(config), manifest));
  }
  return std::make_unique<TrainedEncoder<double>>(train_encoder(build_encoder<double>(config), manifest));
}

}  // namespace avf::enc
