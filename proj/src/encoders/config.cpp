#include <algorithm>

#include "avf/encoders.hpp"
#include "avf/error.hpp"
#include "avf/nn/checkpoint.hpp"

namespace avf::enc {

using nlohmann::json;

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const E (&all)[N], const char* what) {
  for (E e : all) {
    if (to_string(e) == s) return e;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

constexpr Arch kArchs[] = {Arch::vis_lstm_attn, Arch::vis_cnn1d, Arch::text_mha, Arch::aud_conv1d,
                           Arch::aud_mlp};
constexpr Head kHeads[] = {Head::independent_arousal, Head::independent_valence, Head::multitask};
constexpr Augmentation kAugs[] = {Augmentation::none, Augmentation::ssa, Augmentation::csa};
constexpr Precision kPrecisions[] = {Precision::f32, Precision::f64};

}  // namespace

std::string to_string(Arch a) {
  switch (a) {
    case Arch::vis_lstm_attn: return "vis_lstm_attn";
    case Arch::vis_cnn1d: return "vis_cnn1d";
    case Arch::text_mha: return "text_mha";
    case Arch::aud_conv1d: return "aud_conv1d";
    case Arch::aud_mlp: return "aud_mlp";
  }
  return "vis_cnn1d";
}

std::string to_string(Head h) {
  switch (h) {
    case Head::independent_arousal: return "independent_arousal";
    case Head::independent_valence: return "independent_valence";
    case Head::multitask: return "multitask";
  }
  return "multitask";
}

std::string to_string(Augmentation a) {
  switch (a) {
    case Augmentation::none: return "none";
    case Augmentation::ssa: return "ssa";
    case Augmentation::csa: return "csa";
  }
  return "none";
}

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Arch arch_from_string(const std::string& s) { return parse_enum(s, kArchs, "architecture"); }
Head head_from_string(const std::string& s) { return parse_enum(s, kHeads, "head"); }
Augmentation augmentation_from_string(const std::string& s) {
  return parse_enum(s, kAugs, "augmentation");
}
Precision precision_from_string(const std::string& s) {
  return parse_enum(s, kPrecisions, "precision");
}

data::Modality modality_of(Arch a) {
  switch (a) {
    case Arch::vis_lstm_attn:
    case Arch::vis_cnn1d: return data::Modality::visual;
    case Arch::text_mha: return data::Modality::text_emb;
    case Arch::aud_conv1d: return data::Modality::audio_wave;
    case Arch::aud_mlp: return data::Modality::audio_vec;
  }
  return data::Modality::visual;
}

EncoderConfig EncoderConfig::defaults(Arch arch) {
  EncoderConfig c;
  c.arch = arch;
  c.name = to_string(arch);
  switch (arch) {
    case Arch::vis_cnn1d:
    case Arch::vis_lstm_attn:
      c.input_dim = 512;
      c.seq_len = 64;
      c.downsample = 5;
      break;
    case Arch::text_mha:
      c.input_dim = 400;
      c.seq_len = 32;
      c.optimizer.lr0 = 0.005;
      break;
    case Arch::aud_conv1d:
      c.input_dim = 1;
      c.seq_len = 16384;
      break;
    case Arch::aud_mlp:
      c.input_dim = 256;
      c.seq_len = 1;
      c.feature_select = 256;
      c.standardize = true;
      break;
  }
  return c;
}

void EncoderConfig::validate() const {
  auto fail = [this](const std::string& m) { throw ConfigError("encoder '" + name + "': " + m); };
  if (input_dim < 1) fail("input_dim must be >= 1");
  if (seq_len < 1) fail("seq_len must be >= 1");
  if (downsample < 1) fail("downsample must be >= 1");
  if (fc_hidden < 1) fail("fc_hidden must be >= 1");
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (loss.uses_ccc() && batch_size < 2) fail("CCC losses need batch_size >= 2");
  if (ssa_chunk < 1 || csa_window < 1) fail("augmentation parameters must be >= 1");
  switch (arch) {
    case Arch::vis_cnn1d:
      if (conv_widths.empty()) fail("conv_widths must not be empty");
      for (std::size_t i = 0; i < conv_widths.size(); ++i) {
        if (conv_widths[i] < 1 || (i > 0 && conv_widths[i] <= conv_widths[i - 1])) {
          fail("conv_widths must be positive and strictly increasing");
        }
      }
      if (conv_channels < 1) fail("conv_channels must be >= 1");
      break;
    case Arch::vis_lstm_attn:
      if (lstm_hidden < 1 || att_dim < 0) fail("lstm_hidden must be >= 1 and att_dim >= 0");
      break;
    case Arch::text_mha:
      if (mha_heads < 1 || mha_head_dim < 1) fail("mha_heads and mha_head_dim must be >= 1");
      break;
    case Arch::aud_conv1d:
      if (input_dim != 1) fail("aud_conv1d consumes a mono waveform: input_dim must be 1");
      if (aud_channels.empty() || aud_channels.size() != aud_kernels.size() ||
          aud_channels.size() != aud_strides.size()) {
        fail("aud_channels, aud_kernels and aud_strides must have equal, non-zero length");
      }
      for (std::size_t i = 0; i < aud_channels.size(); ++i) {
        if (aud_channels[i] < 1 || aud_kernels[i] < 1 || aud_strides[i] < 1) {
          fail("audio conv layer sizes must be >= 1");
        }
      }
      break;
    case Arch::aud_mlp:
      if (mlp_hidden.empty()) fail("mlp_hidden must not be empty");
      if (std::any_of(mlp_hidden.begin(), mlp_hidden.end(), [](int v) { return v < 1; })) {
        fail("mlp_hidden sizes must be >= 1");
      }
      if (seq_len != 1) fail("aud_mlp consumes one feature vector: seq_len must be 1");
      if (feature_select < 0) fail("feature_select must be >= 0");
      if (feature_select > 0 && feature_select != input_dim) {
        fail("feature_select must equal input_dim when set");
      }
      break;
  }
}

json to_json(const EncoderConfig& c) {
  return {{"name", c.name},
          {"arch", to_string(c.arch)},
          {"input_dim", c.input_dim},
          {"seq_len", c.seq_len},
          {"downsample", c.downsample},
          {"conv_widths", c.conv_widths},
          {"conv_channels", c.conv_channels},
          {"lstm_hidden", c.lstm_hidden},
          {"att_dim", c.att_dim},
          {"mha_heads", c.mha_heads},
          {"mha_head_dim", c.mha_head_dim},
          {"aud_channels", c.aud_channels},
          {"aud_kernels", c.aud_kernels},
          {"aud_strides", c.aud_strides},
          {"mlp_hidden", c.mlp_hidden},
          {"feature_select", c.feature_select},
          {"standardize", c.standardize},
          {"fc_hidden", c.fc_hidden},
          {"head", to_string(c.head)},
          {"loss", {{"kind", nn::to_string(c.loss.kind)}, {"lambda", c.loss.lambda}}},
          {"optimizer", nn::to_json(c.optimizer)},
          {"augmentation", to_string(c.augmentation)},
          {"ssa_chunk", c.ssa_chunk},
          {"csa_window", c.csa_window},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  try {
    EncoderConfig c = EncoderConfig::defaults(arch_from_string(j.at("arch").get<std::string>()));
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("name", c.name);
    get("input_dim", c.input_dim);
    get("seq_len", c.seq_len);
    get("downsample", c.downsample);
    get("conv_widths", c.conv_widths);
    get("conv_channels", c.conv_channels);
    get("lstm_hidden", c.lstm_hidden);
    get("att_dim", c.att_dim);
    get("mha_heads", c.mha_heads);
    get("mha_head_dim", c.mha_head_dim);
    get("aud_channels", c.aud_channels);
    get("aud_kernels", c.aud_kernels);
    get("aud_strides", c.aud_strides);
    get("mlp_hidden", c.mlp_hidden);
    get("feature_select", c.feature_select);
    get("standardize", c.standardize);
    get("fc_hidden", c.fc_hidden);
    get("ssa_chunk", c.ssa_chunk);
    get("csa_window", c.csa_window);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("seed", c.seed);
    if (j.contains("head")) c.head = head_from_string(j["head"].get<std::string>());
    if (j.contains("augmentation")) {
      c.augmentation = augmentation_from_string(j["augmentation"].get<std::string>());
    }
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      if (l.is_string()) {
        c.loss.kind = nn::loss_kind_from_string(l.get<std::string>());
      } else {
        if (l.contains("kind")) c.loss.kind = nn::loss_kind_from_string(l["kind"].get<std::string>());
        if (l.contains("lambda")) c.loss.lambda = l["lambda"].get<double>();
      }
    }
    if (j.contains("optimizer")) c.optimizer = nn::optimizer_config_from_json(j["optimizer"], c.optimizer);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("encoder config: ") + e.what());
  }
}

}  // namespace avf::enc
