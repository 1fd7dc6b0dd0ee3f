#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avf/dataio.hpp"
#include "avf/nn/layers.hpp"
#include "avf/nn/loss.hpp"
#include "avf/nn/optimizer.hpp"

namespace avf::enc {

enum class Arch { vis_lstm_attn, vis_cnn1d, text_mha, aud_conv1d, aud_mlp };
enum class Head { independent_arousal, independent_valence, multitask };
enum class Augmentation { none, ssa, csa };
enum class Precision { f32, f64 };

std::string to_string(Arch a);
std::string to_string(Head h);
std::string to_string(Augmentation a);
std::string to_string(Precision p);
Arch arch_from_string(const std::string& s);
Head head_from_string(const std::string& s);
Augmentation augmentation_from_string(const std::string& s);
Precision precision_from_string(const std::string& s);

/// Which manifest modality an architecture consumes.
data::Modality modality_of(Arch a);

struct EncoderConfig {
  std::string name = "encoder";
  Arch arch = Arch::vis_cnn1d;
  int input_dim = 512;
  /// Frames (tokens, samples) kept after down-sampling; shorter inputs are
  /// padded and masked, longer ones stride-subsampled.
  int seq_len = 64;
  /// Keep one frame in `downsample` before capping (5 for visual models).
  int downsample = 1;

  // vis_cnn1d
  std::vector<int> conv_widths = {2, 3, 4, 5};
  int conv_channels = 128;
  // vis_lstm_attn
  int lstm_hidden = 256;
  int att_dim = 0;  // 0: same as lstm_hidden
  // text_mha
  int mha_heads = 8;
  int mha_head_dim = 64;
  // aud_conv1d: one entry per layer
  std::vector<int> aud_channels = {16, 32, 64, 128, 256, 256, 256, 256};
  std::vector<int> aud_kernels = {8, 4, 4, 4, 4, 4, 4, 4};
  std::vector<int> aud_strides = {2, 2, 2, 2, 2, 2, 2, 2};
  // aud_mlp
  std::vector<int> mlp_hidden = {256, 128};
  int feature_select = 0;   // keep the top-k columns of the raw vector; 0 keeps all
  bool standardize = false; // z-score raw inputs with training-split statistics
  /// Hidden FC width between representation and head (vis_*, text_mha).
  int fc_hidden = 256;

  Head head = Head::multitask;
  nn::LossSpec loss;
  nn::OptimizerConfig optimizer;
  Augmentation augmentation = Augmentation::none;
  int ssa_chunk = 5;
  int csa_window = 64;
  int epochs = 20;
  int batch_size = 64;
  std::uint64_t seed = 0;

  /// Published default configuration for an architecture.
  static EncoderConfig defaults(Arch arch);

  int output_dim() const { return head == Head::multitask ? 2 : 1; }
  bool predicts_arousal() const { return head != Head::independent_valence; }
  bool predicts_valence() const { return head != Head::independent_arousal; }

  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;
};

nlohmann::json to_json(const EncoderConfig& c);
/// Fields absent from `j` keep the architecture defaults.
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

/// Arousal and/or valence, depending on the head.
struct Prediction {
  std::optional<double> arousal;
  std::optional<double> valence;
};

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> train_ccc_arousal, train_ccc_valence;
  std::optional<double> val_ccc_arousal, val_ccc_valence;
};

struct History {
  std::vector<HistoryRow> rows;
  int best_epoch = 0;  // 0: initialization / last epoch without validation data

  std::string to_tsv() const;
};

// --- network -----------------------------------------------------------------------

template <typename T>
struct NetOutput {
  nn::Row<T> representation;
  nn::Row<T> prediction;
};

/// Per-sample intermediate values kept by forward for backward.
struct Tape {
  virtual ~Tape() = default;
};

/// One of the five fixed architectures. Inputs are the valid rows of a
/// masked sequence, already compacted: padding never reaches the network,
/// so appending padded frames cannot change any output.
template <typename T>
class Network {
 public:
  virtual ~Network() = default;

  virtual std::unique_ptr<Network> clone() const = 0;
  virtual std::unique_ptr<Network> zeros_like() const = 0;
  virtual void collect(nn::ParamList<T>& out) = 0;

  virtual Eigen::Index representation_dim() const = 0;
  virtual Eigen::Index output_dim() const = 0;

  /// `tape` may be null for inference.
  virtual NetOutput<T> forward(const nn::Mat<T>& x, std::unique_ptr<Tape>* tape) const = 0;
  /// Accumulates parameter gradients into `grad` (same architecture) and
  /// returns d loss / d x for the upstream gradient on the prediction.
  virtual nn::Mat<T> backward(const Tape& tape, const nn::Row<T>& dpred, Network& grad) const = 0;

  nn::ParamList<T> parameters() {
    nn::ParamList<T> p;
    collect(p);
    return p;
  }
};

/// Builds the architecture of `config`. Trunk parameters are drawn from a
/// stream derived from (seed, "trunk") and head parameters from (seed,
/// "head"), so models that differ only in head type share their trunk.
template <typename T>
std::unique_ptr<Network<T>> build_network(const EncoderConfig& config, std::uint64_t seed);

// --- preprocessing ------------------------------------------------------------------

/// Raw feature sequence -> network input. Fitted statistics (aud_mlp feature
/// selection and standardization) come from the training split only.
struct Preprocessor {
  std::vector<std::size_t> selected;  // empty: all columns
  Eigen::RowVectorXd mean, stdev;     // empty: no standardization

  bool fitted() const { return !selected.empty() || mean.size() > 0; }
};

/// Deterministic inference path: downsample, cap/pad, mask.
data::MaskedSequence prepare_eval(const EncoderConfig& c, const Preprocessor& pre,
                                  const data::FeatureSequence& raw);
/// Training path: the configured SSA/CSA draw replaces or follows
/// down-sampling, then cap/pad.
data::MaskedSequence prepare_train(const EncoderConfig& c, const Preprocessor& pre,
                                   const data::FeatureSequence& raw, Rng& rng);

/// Valid rows of a masked sequence, in order.
template <typename T>
nn::Mat<T> compact(const data::MaskedSequence& s);

// --- models ------------------------------------------------------------------------------

/// Precision-erased view of a trained encoder.
class EncoderModel {
 public:
  virtual ~EncoderModel() = default;
  virtual const EncoderConfig& config() const = 0;
  virtual const History& history() const = 0;
  virtual Precision precision() const = 0;
  virtual Eigen::Index representation_dim() const = 0;

  virtual Prediction predict(const data::FeatureSequence& raw) const = 0;
  virtual std::vector<double> represent(const data::FeatureSequence& raw) const = 0;
  /// Prediction and representation of a masked (already prepared) input.
  virtual Prediction predict_masked(const data::MaskedSequence& s) const = 0;
  virtual std::vector<double> represent_masked(const data::MaskedSequence& s) const = 0;

  /// Writes the checkpoint directory (index.json, AFF1 tensors, config.json,
  /// history.tsv).
  virtual void save(const std::filesystem::path& dir) const = 0;
};

template <typename T>
class TrainedEncoder final : public EncoderModel {
 public:
  TrainedEncoder(EncoderConfig config, std::unique_ptr<Network<T>> net);
  TrainedEncoder(const TrainedEncoder& other);
  TrainedEncoder& operator=(const TrainedEncoder&) = delete;

  const EncoderConfig& config() const override { return config_; }
  const History& history() const override { return history_; }
  Precision precision() const override;
  Eigen::Index representation_dim() const override { return net_->representation_dim(); }

  Prediction predict(const data::FeatureSequence& raw) const override;
  std::vector<double> represent(const data::FeatureSequence& raw) const override;
  Prediction predict_masked(const data::MaskedSequence& s) const override;
  std::vector<double> represent_masked(const data::MaskedSequence& s) const override;
  void save(const std::filesystem::path& dir) const override;

  Network<T>& network() { return *net_; }
  const Network<T>& network() const { return *net_; }
  Preprocessor& preprocessor() { return pre_; }
  const Preprocessor& preprocessor() const { return pre_; }
  History& mutable_history() { return history_; }
  nn::OptimizerState<T>& optimizer_state() { return opt_; }
  const nn::OptimizerState<T>& optimizer_state() const { return opt_; }

  static TrainedEncoder load(const std::filesystem::path& dir);

 private:
  EncoderConfig config_;
  std::unique_ptr<Network<T>> net_;
  Preprocessor pre_;
  History history_;
  nn::OptimizerState<T> opt_;
};

/// Untrained model with freshly initialized parameters.
template <typename T>
TrainedEncoder<T> build_encoder(const EncoderConfig& config);

/// Mini-batch training on the manifest's train split, validating on its
/// validation split after every epoch. The returned parameters are those of
/// the best mean validation CCC epoch (the last epoch without validation
/// data). Throws NumericalError naming the epoch if the loss diverges.
template <typename T>
TrainedEncoder<T> train_encoder(TrainedEncoder<T> model, const data::DatasetManifest& manifest);

/// Builds and trains at the requested precision.
std::unique_ptr<EncoderModel> train_encoder(const EncoderConfig& config,
                                            const data::DatasetManifest& manifest,
                                            Precision precision);

std::unique_ptr<EncoderModel> load_encoder(const std::filesystem::path& dir);

/// Reads the record's modality from disk and predicts. Throws DataError when
/// the record lacks the model's modality.
Prediction encoder_predict(const EncoderModel& model, const data::DatasetManifest& manifest,
                           const data::UtteranceRecord& record);
std::vector<double> extract_representation(const EncoderModel& model,
                                           const data::DatasetManifest& manifest,
                                           const data::UtteranceRecord& record);

}  // namespace avf::enc
