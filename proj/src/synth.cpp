#include "avf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include "avf/error.hpp"
#include "avf/rng.hpp"

namespace avf::synth {

namespace fs = std::filesystem;
using data::FeatureMatrix;
using data::FeatureSequence;

namespace {

struct Layout {
  std::vector<int> vis_arousal, vis_valence;  // planted visual columns
  std::vector<double> vis_sign;               // +-1 per visual column
  Eigen::RowVectorXd audio_scale, audio_offset;
  Eigen::RowVectorXd text_arousal, text_valence;  // token directions
};

Layout make_layout(const SynthOptions& o) {
  Rng rng(derive_seed(o.seed, "layout"));
  Layout l;
  std::vector<int> cols(static_cast<std::size_t>(o.visual_dim));
  for (int i = 0; i < o.visual_dim; ++i) cols[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = cols.size(); i > 1; --i) std::swap(cols[i - 1], cols[rng.uniform_index(i)]);
  const int planted = std::min(16, o.visual_dim / 2);
  l.vis_arousal.assign(cols.begin(), cols.begin() + planted);
  l.vis_valence.assign(cols.begin() + planted, cols.begin() + 2 * planted);
  l.vis_sign.resize(static_cast<std::size_t>(o.visual_dim));
  for (auto& s : l.vis_sign) s = rng.uniform01() < 0.5 ? -1.0 : 1.0;

  l.audio_scale.resize(o.audio_dim);
  l.audio_offset.resize(o.audio_dim);
  for (int j = 0; j < o.audio_dim; ++j) {
    l.audio_scale(j) = std::exp(rng.normal());
    l.audio_offset(j) = 5.0 * rng.normal();
  }

  l.text_arousal.resize(o.text_dim);
  l.text_valence.resize(o.text_dim);
  for (int j = 0; j < o.text_dim; ++j) {
    l.text_arousal(j) = rng.normal() / std::sqrt(static_cast<double>(o.text_dim)) * 4.0;
    l.text_valence(j) = rng.normal() / std::sqrt(static_cast<double>(o.text_dim)) * 4.0;
  }
  return l;
}

FeatureSequence visual(const Layout& l, const SynthOptions& o, double sa, double sv, Rng& rng) {
  const auto frames = rng.uniform_int(o.min_frames, o.max_frames);
  FeatureMatrix m(frames, o.visual_dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = o.frame_noise * rng.normal();
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (const int c : l.vis_arousal) m(t, c) += l.vis_sign[static_cast<std::size_t>(c)] * sa;
    for (const int c : l.vis_valence) m(t, c) += l.vis_sign[static_cast<std::size_t>(c)] * sv;
  }
  return FeatureSequence(m);
}

FeatureSequence audio_vec(const Layout& l, const SynthOptions& o, double sa, double sv, Rng& rng) {
  FeatureMatrix m(1, o.audio_dim);
  for (int j = 0; j < o.audio_dim; ++j) m(0, j) = rng.normal();
  auto plant = [&](int col, double s, double weight) {
    if (col < o.audio_dim) m(0, col) = weight * s + std::sqrt(1.0 - weight * weight) * m(0, col);
  };
  plant(7, sa, 0.95);
  plant(42, sv, 0.95);
  for (const int c : {3, 11, 19}) plant(c, sa, 0.6);
  for (const int c : {50, 61, 77}) plant(c, sv, 0.6);
  for (int j = 0; j < o.audio_dim; ++j) m(0, j) = l.audio_offset(j) + l.audio_scale(j) * m(0, j);
  return FeatureSequence(m, 1);
}

FeatureSequence text(const Layout& l, const SynthOptions& o, double sa, double sv, Rng& rng) {
  const auto tokens = rng.uniform_int(o.min_tokens, o.max_tokens);
  FeatureMatrix m(tokens, o.text_dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.3 * o.frame_noise * rng.normal();
  for (Eigen::Index t = 0; t < tokens; ++t) {
    // Roughly half the tokens are affective; an utterance always has one.
    if (t > 0 && rng.uniform01() < 0.5) continue;
    m.row(t) += sa * l.text_arousal + sv * l.text_valence;
  }
  return FeatureSequence(m);
}

FeatureSequence waveform(const SynthOptions& o, double sa, double sv, Rng& rng) {
  FeatureMatrix m(1, o.wave_length);
  const double amp = 0.5 + 0.15 * sa;
  const double freq = 0.05 + 0.01 * std::clamp(sv, -3.0, 3.0);
  const double phase = 2.0 * std::numbers::pi * rng.uniform01();
  for (int t = 0; t < o.wave_length; ++t) {
    m(0, t) = amp * std::sin(2.0 * std::numbers::pi * freq * t + phase) + 0.1 * rng.normal();
  }
  return FeatureSequence(m, 1);
}

std::string numbered(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04d", prefix, i);
  return buf;
}

}  // namespace

data::DatasetManifest generate(const fs::path& dir, const SynthOptions& o) {
  if (o.train < 1 || o.validation < 0 || o.utterances_per_video < 1) {
    throw ConfigError("synth: need train >= 1, validation >= 0, utterances_per_video >= 1");
  }
  if (o.min_frames < 1 || o.max_frames < o.min_frames || o.min_tokens < 1 || o.max_tokens < o.min_tokens) {
    throw ConfigError("synth: invalid frame or token range");
  }
  if (o.visual_dim < 2 || o.audio_dim < 1 || o.text_dim < 1 || o.wave_length < 0) {
    throw ConfigError("synth: invalid dimensions");
  }
  fs::create_directories(dir / "features");
  const Layout layout = make_layout(o);
  const int train_videos = (o.train + o.utterances_per_video - 1) / o.utterances_per_video;

  data::DatasetManifest manifest;
  manifest.base_dir = dir;
  const int total = o.train + o.validation;
  for (int i = 0; i < total; ++i) {
    const bool is_train = i < o.train;
    const int local = is_train ? i : i - o.train;
    const int video = (is_train ? 0 : train_videos) + local / o.utterances_per_video;

    Rng vrng(derive_seed(o.seed, "video", static_cast<std::uint64_t>(video)));
    const double va = vrng.normal(), vv = vrng.normal();
    Rng rng(derive_seed(o.seed, "utterance", static_cast<std::uint64_t>(i)));
    const double za = 0.3 * va + std::sqrt(1.0 - 0.09) * rng.normal();
    const double zv_raw = 0.3 * vv + std::sqrt(1.0 - 0.09) * rng.normal();
    const double zv = 0.4 * za + std::sqrt(1.0 - 0.16) * zv_raw;

    data::UtteranceRecord r;
    r.utterance_id = numbered("utt", i);
    r.video_id = numbered("vid", video);
    r.split = is_train ? data::Split::train : data::Split::validation;
    r.arousal = 0.5 + 0.15 * std::clamp(za, -3.0, 3.0);
    r.valence = 0.3 * std::clamp(zv, -3.0, 3.0);

    auto noisy = [&](double z) { return z + o.modality_noise * rng.normal(); };
    auto emit = [&](data::Modality m, const FeatureSequence& s) {
      const std::string rel = "features/" + r.utterance_id + "." + data::to_string(m) + ".aff1";
      data::write_feature_tensor(dir / rel, s);
      r.ref(m) = rel;
    };
    {
      const double sa = noisy(za), sv = noisy(zv);
      emit(data::Modality::visual, visual(layout, o, sa, sv, rng));
    }
    {
      const double sa = noisy(za), sv = noisy(zv);
      emit(data::Modality::audio_vec, audio_vec(layout, o, sa, sv, rng));
    }
    {
      const double sa = noisy(za), sv = noisy(zv);
      emit(data::Modality::text_emb, text(layout, o, sa, sv, rng));
    }
    if (o.wave_length > 0) {
      const double sa = noisy(za), sv = noisy(zv);
      emit(data::Modality::audio_wave, waveform(o, sa, sv, rng));
    }
    manifest.records.push_back(std::move(r));
  }
  data::write_manifest(dir / "manifest.jsonl", manifest);
  return data::parse_manifest(dir / "manifest.jsonl");
}

}  // namespace avf::synth
