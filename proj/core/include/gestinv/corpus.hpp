#pragma once

#include <cstdint>
#include <vector>

#include "gestinv/denoiser.hpp"
#include "gestinv/motion.hpp"

namespace gestinv {

// Clip-level hidden variable: what the condition does not determine.
struct ClipLatent {
  double frequency_hz = 1.0;
  std::vector<double> amplitude;  // per joint-channel
  std::vector<double> phase;      // per joint-channel
};

struct CorpusClip {
  MotionSequence motion;  // carries `condition` as well
  ConditionVector condition;
  ClipLatent latent;
};

struct SyntheticCorpus {
  std::uint64_t generator_seed = 0;
  std::vector<CorpusClip> clips;

  std::vector<TrainingClip> training_clips() const;
};

struct CorpusConfig {
  std::size_t feature_dim = 4;
  int speakers = 2;
  double frame_rate = 30.0;
  // Range of the per-channel clip latent amplitude (radians).
  double latent_amplitude_min = 0.3;
  double latent_amplitude_max = 0.8;
};

// Seeded corpus of sinusoidal "gestures" on the default skeleton. Each joint
// channel mixes speech-driven terms (scaled per speaker) with a clip latent
// oscillation, so the condition alone does not determine the motion.
SyntheticCorpus synth_corpus(std::uint64_t seed, std::size_t n_clips, std::size_t frames,
                             const CorpusConfig& config = {});

// Deterministic clip motion for a given condition and latent.
MotionSequence synth_clip(const ConditionVector& condition, const ClipLatent& latent,
                          const CorpusConfig& config = {});

// Random condition / latent draws used by synth_corpus.
ConditionVector synth_condition(std::uint64_t seed, std::size_t frames, int speaker_id,
                                const CorpusConfig& config = {});
ClipLatent synth_latent(std::uint64_t seed, std::size_t pose_size,
                        const CorpusConfig& config = {});

}  // namespace gestinv
