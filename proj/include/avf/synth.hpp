#pragma once

#include <cstdint>
#include <filesystem>

#include "avf/dataio.hpp"

// Synthetic dataset with known signal, for end-to-end checks.
//
// Each utterance has latent standardized targets (za, zv): a video-level
// component plus an utterance-level one, with zv partly correlated to za.
// Labels map them into the default ranges:
//   arousal = 0.5 + 0.15 * clamp(za, -3, 3),  valence = 0.3 * clamp(zv, -3, 3).
// Every modality sees its own noisy copy (za + n, zv + n'), n ~ N(0, modality_noise^2),
// so no single modality is perfect and the noise is independent across modalities.
//
//   visual     frames x 512, signal on a seeded set of columns in every frame
//   audio_vec  256, strongest signal on columns 7 (arousal) and 42 (valence),
//              weaker copies on a few others, every column arbitrarily scaled
//   text_emb   tokens x 400, signal along two seeded directions on about half
//              of the tokens
//   audio_wave optional mono waveform whose amplitude and pitch carry the signal

namespace avf::synth {

struct SynthOptions {
  int train = 200;
  int validation = 50;
  int utterances_per_video = 4;
  int visual_dim = 512;
  int audio_dim = 256;
  int text_dim = 400;
  int min_frames = 20, max_frames = 120;
  int min_tokens = 4, max_tokens = 20;
  int wave_length = 0;  // 0: no waveform
  double modality_noise = 0.5;
  double frame_noise = 1.0;
  std::uint64_t seed = 0;
};

/// Writes `manifest.jsonl` and `features/*.aff1` under `dir` and returns the
/// parsed manifest. Output is a pure function of the options.
data::DatasetManifest generate(const std::filesystem::path& dir, const SynthOptions& opts);

}  // namespace avf::synth
