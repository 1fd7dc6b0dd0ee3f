#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "avf/encoders.hpp"
#include "avf/error.hpp"
#include "avf/nn/checkpoint.hpp"

namespace avf::enc {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Mat;

namespace {

// Raw tensor -> (frames x input_dim) sequence for the architecture.
data::FeatureSequence to_input(const EncoderConfig& c, const Preprocessor& pre,
                               const data::FeatureSequence& raw) {
  data::FeatureSequence seq = raw;
  if (c.arch == Arch::aud_conv1d && seq.frames() == 1 && seq.dim() > 1) {
    seq.data = data::FeatureMatrix(raw.data.transpose());
  }
  if (c.arch == Arch::aud_mlp) {
    if (seq.frames() != 1) throw DataError("aud_mlp expects a feature vector, got a sequence");
    if (!pre.selected.empty()) {
      data::FeatureMatrix sel(1, static_cast<Eigen::Index>(pre.selected.size()));
      for (std::size_t i = 0; i < pre.selected.size(); ++i) {
        const auto j = static_cast<Eigen::Index>(pre.selected[i]);
        if (j >= raw.dim()) throw DataError("feature vector shorter than the fitted selection");
        sel(0, static_cast<Eigen::Index>(i)) = raw.data(0, j);
      }
      seq.data = std::move(sel);
    }
    if (pre.mean.size() > 0) {
      if (pre.mean.size() != seq.dim()) throw DataError("feature vector does not match fitted statistics");
      seq.data = ((seq.data.array().rowwise() - pre.mean.array()).rowwise() / pre.stdev.array()).matrix();
    }
  }
  if (seq.dim() != c.input_dim) {
    throw DataError("encoder '" + c.name + "' expects input_dim " + std::to_string(c.input_dim) +
                    ", data has " + std::to_string(seq.dim()));
  }
  return seq;
}

Prediction to_prediction(const EncoderConfig& c, const nn::Row<double>& p) {
  Prediction out;
  switch (c.head) {
    case Head::multitask:
      out.arousal = p(0);
      out.valence = p(1);
      break;
    case Head::independent_arousal: out.arousal = p(0); break;
    case Head::independent_valence: out.valence = p(0); break;
  }
  return out;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

json history_to_json(const History& h) {
  json rows = json::array();
  for (const auto& r : h.rows) {
    rows.push_back({{"epoch", r.epoch},
                    {"train_loss", r.train_loss},
                    {"train_ccc_arousal", opt_json(r.train_ccc_arousal)},
                    {"train_ccc_valence", opt_json(r.train_ccc_valence)},
                    {"val_ccc_arousal", opt_json(r.val_ccc_arousal)},
                    {"val_ccc_valence", opt_json(r.val_ccc_valence)}});
  }
  return {{"best_epoch", h.best_epoch}, {"rows", rows}};
}

History history_from_json(const json& j) {
  History h;
  h.best_epoch = j.at("best_epoch").get<int>();
  for (const auto& r : j.at("rows")) {
    h.rows.push_back({r.at("epoch").get<int>(), r.at("train_loss").get<double>(),
                      opt_from(r, "train_ccc_arousal"), opt_from(r, "train_ccc_valence"),
                      opt_from(r, "val_ccc_arousal"), opt_from(r, "val_ccc_valence")});
  }
  return h;
}

template <typename T>
constexpr Precision precision_of() {
  return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

}  // namespace

std::string History::to_tsv() const {
  std::ostringstream os;
  os << "epoch\ttrain_loss\ttrain_ccc_arousal\ttrain_ccc_valence\tval_ccc_arousal\tval_ccc_valence\n";
  for (const auto& r : rows) {
    os << r.epoch << '\t' << fmt(r.train_loss) << '\t' << fmt(r.train_ccc_arousal) << '\t'
       << fmt(r.train_ccc_valence) << '\t' << fmt(r.val_ccc_arousal) << '\t' << fmt(r.val_ccc_valence)
       << '\n';
  }
  return os.str();
}

data::MaskedSequence prepare_eval(const EncoderConfig& c, const Preprocessor& pre,
                                  const data::FeatureSequence& raw) {
  const auto seq = to_input(c, pre, raw);
  return data::pad_truncate(data::downsample_every_k(seq, static_cast<std::size_t>(c.downsample)),
                            static_cast<std::size_t>(c.seq_len));
}

data::MaskedSequence prepare_train(const EncoderConfig& c, const Preprocessor& pre,
                                   const data::FeatureSequence& raw, Rng& rng) {
  auto seq = to_input(c, pre, raw);
  switch (c.augmentation) {
    case Augmentation::none:
      seq = data::downsample_every_k(seq, static_cast<std::size_t>(c.downsample));
      break;
    case Augmentation::ssa:
      seq = data::ssa_sample(seq, static_cast<std::size_t>(c.ssa_chunk), rng);
      break;
    case Augmentation::csa:
      seq = data::csa_sample(data::downsample_every_k(seq, static_cast<std::size_t>(c.downsample)),
                             static_cast<std::size_t>(c.csa_window), rng);
      break;
  }
  return data::pad_truncate(seq, static_cast<std::size_t>(c.seq_len));
}

template <typename T>
Mat<T> compact(const data::MaskedSequence& s) {
  const Eigen::Index n = s.valid_count();
  if (n == 0) throw DataError("input has no valid frame");
  Mat<T> x(n, s.data.cols());
  Eigen::Index r = 0;
  for (Eigen::Index t = 0; t < s.data.rows(); ++t) {
    if (s.mask[static_cast<std::size_t>(t)]) x.row(r++) = s.data.row(t).template cast<T>();
  }
  return x;
}

template Mat<float> compact<float>(const data::MaskedSequence&);
template Mat<double> compact<double>(const data::MaskedSequence&);

// --- TrainedEncoder ---------------------------------------------------------------------

template <typename T>
TrainedEncoder<T>::TrainedEncoder(EncoderConfig config, std::unique_ptr<Network<T>> net)
    : config_(std::move(config)), net_(std::move(net)) {
  opt_.config = config_.optimizer;
  opt_.reset(net_->parameters());
}

template <typename T>
TrainedEncoder<T>::TrainedEncoder(const TrainedEncoder& o)
    : config_(o.config_), net_(o.net_->clone()), pre_(o.pre_), history_(o.history_), opt_(o.opt_) {}

template <typename T>
Precision TrainedEncoder<T>::precision() const {
  return precision_of<T>();
}

template <typename T>
Prediction TrainedEncoder<T>::predict_masked(const data::MaskedSequence& s) const {
  const auto out = net_->forward(compact<T>(s), nullptr);
  return to_prediction(config_, out.prediction.template cast<double>());
}

template <typename T>
std::vector<double> TrainedEncoder<T>::represent_masked(const data::MaskedSequence& s) const {
  const auto out = net_->forward(compact<T>(s), nullptr);
  std::vector<double> v(static_cast<std::size_t>(out.representation.size()));
  for (Eigen::Index i = 0; i < out.representation.size(); ++i) {
    v[static_cast<std::size_t>(i)] = static_cast<double>(out.representation(i));
  }
  return v;
}

template <typename T>
Prediction TrainedEncoder<T>::predict(const data::FeatureSequence& raw) const {
  return predict_masked(prepare_eval(config_, pre_, raw));
}

template <typename T>
std::vector<double> TrainedEncoder<T>::represent(const data::FeatureSequence& raw) const {
  return represent_masked(prepare_eval(config_, pre_, raw));
}

template <typename T>
void TrainedEncoder<T>::save(const fs::path& dir) const {
  fs::create_directories(dir);
  auto params = const_cast<Network<T>&>(*net_).parameters();

  json index;
  index["format"] = nn::kCheckpointFormat;
  index["precision"] = to_string(precision_of<T>());
  index["architecture"] = to_json(config_);
  index["representation_dim"] = net_->representation_dim();
  index["parameters"] = nn::save_tensors(dir, params);

  nn::ParamList<double> buffers;
  Mat<double> sel, mean, stdev;
  if (!pre_.selected.empty()) {
    sel.resize(1, static_cast<Eigen::Index>(pre_.selected.size()));
    for (std::size_t i = 0; i < pre_.selected.size(); ++i) {
      sel(0, static_cast<Eigen::Index>(i)) = static_cast<double>(pre_.selected[i]);
    }
    buffers.emplace_back("pre.selected", &sel);
  }
  if (pre_.mean.size() > 0) {
    mean = pre_.mean;
    stdev = pre_.stdev;
    buffers.emplace_back("pre.mean", &mean);
    buffers.emplace_back("pre.std", &stdev);
  }
  index["buffers"] = nn::save_tensors(dir, buffers);
  index["optimizer"] = nn::save_optimizer(dir, opt_, params);
  index["history"] = history_to_json(history_);

  nn::write_json(dir / "index.json", index);
  nn::write_json(dir / "config.json", to_json(config_));
  std::ofstream tsv(dir / "history.tsv", std::ios::trunc | std::ios::binary);
  tsv << history_.to_tsv();
  if (!tsv) throw Error("cannot write " + (dir / "history.tsv").string());
}

template <typename T>
TrainedEncoder<T> TrainedEncoder<T>::load(const fs::path& dir) {
  const json index = nn::read_json(dir / "index.json");
  if (index.value("format", "") != nn::kCheckpointFormat) {
    throw DataError(dir.string() + ": not an encoder checkpoint");
  }
  const EncoderConfig cfg = encoder_config_from_json(index.at("architecture"));
  TrainedEncoder<T> model(cfg, build_network<T>(cfg, cfg.seed));
  auto params = model.net_->parameters();
  nn::load_tensors(dir, index.at("parameters"), params);

  const json& buf = index.at("buffers");
  auto load_row = [&](const char* name) {
    const auto seq = data::read_feature_tensor(dir / buf.at(name).get<std::string>());
    return Eigen::RowVectorXd(seq.data.row(0));
  };
  if (buf.contains("pre.selected")) {
    const Eigen::RowVectorXd s = load_row("pre.selected");
    for (Eigen::Index i = 0; i < s.size(); ++i) model.pre_.selected.push_back(static_cast<std::size_t>(s(i)));
  }
  if (buf.contains("pre.mean")) {
    model.pre_.mean = load_row("pre.mean");
    model.pre_.stdev = load_row("pre.std");
  }
  nn::load_optimizer(dir, index.at("optimizer"), model.opt_, params);
  model.history_ = history_from_json(index.at("history"));
  return model;
}

template <typename T>
TrainedEncoder<T> build_encoder(const EncoderConfig& config) {
  return TrainedEncoder<T>(config, build_network<T>(config, config.seed));
}

template class TrainedEncoder<float>;
template class TrainedEncoder<double>;
template TrainedEncoder<float> build_encoder<float>(const EncoderConfig&);
template TrainedEncoder<double> build_encoder<double>(const EncoderConfig&);

std::unique_ptr<EncoderModel> load_encoder(const fs::path& dir) {
  const json index = nn::read_json(dir / "index.json");
  const auto p = precision_from_string(index.value("precision", "f64"));
  if (p == Precision::f32) return std::make_unique<TrainedEncoder<float>>(TrainedEncoder<float>::load(dir));
  return std::make_unique<TrainedEncoder<double>>(TrainedEncoder<double>::load(dir));
}

Prediction encoder_predict(const EncoderModel& model, const data::DatasetManifest& manifest,
                           const data::UtteranceRecord& record) {
  return model.predict(manifest.load(record, modality_of(model.config().arch)));
}

std::vector<double> extract_representation(const EncoderModel& model, const data::DatasetManifest& manifest,
                                           const data::UtteranceRecord& record) {
  return model.represent(manifest.load(record, modality_of(model.config().arch)));
}

}  // namespace avf::enc
