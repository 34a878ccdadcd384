#include "gestinv/corpus.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace gestinv {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Fixed "world" of the corpus: the speech-to-joint mixing and speaker
// styles do not depend on the corpus seed.
constexpr std::uint64_t kWorldSeed = 0x5eed'cafe'f00dull;

struct World {
  std::vector<double> rest;     // pose_size
  std::vector<double> mixing;   // pose_size x feature_dim
  std::vector<double> style;    // speakers x pose_size (amplitude scale)
  std::vector<double> posture;  // speakers x pose_size (offset)
};

World make_world(std::size_t pose_size, const CorpusConfig& config) {
  std::mt19937_64 rng(kWorldSeed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  World w;
  w.rest.resize(pose_size);
  for (auto& v : w.rest) v = 0.3 * u(rng);
  w.mixing.resize(pose_size * config.feature_dim);
  for (auto& v : w.mixing) v = 0.25 * u(rng);
  w.style.resize(static_cast<std::size_t>(config.speakers) * pose_size);
  for (auto& v : w.style) v = 1.0 + 0.5 * u(rng);
  w.posture.resize(static_cast<std::size_t>(config.speakers) * pose_size);
  for (auto& v : w.posture) v = 0.2 * u(rng);
  return w;
}

}  // namespace

ConditionVector synth_condition(std::uint64_t seed, std::size_t frames, int speaker_id,
                                const CorpusConfig& config) {
  const std::size_t pose_size = Skeleton::default_skeleton().joint_count() * kRotationChannels;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(0.3, 1.5);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  ConditionVector c;
  c.frames = frames;
  c.feature_dim = config.feature_dim;
  c.speaker_id = speaker_id;
  c.speech_features.resize(frames * config.feature_dim);
  for (std::size_t k = 0; k < config.feature_dim; ++k) {
    const double w = freq(rng);
    const double ph = phase(rng);
    for (std::size_t f = 0; f < frames; ++f) {
      c.speech_features[f * config.feature_dim + k] =
          std::sin(kTwoPi * w * static_cast<double>(f) / config.frame_rate + ph);
    }
  }
  c.seed_pose.assign(pose_size, 0.0);
  return c;
}

ClipLatent synth_latent(std::uint64_t seed, std::size_t pose_size, const CorpusConfig& config) {
  if (!(config.latent_amplitude_min >= 0.0 &&
        config.latent_amplitude_min <= config.latent_amplitude_max &&
        config.latent_amplitude_max <= 1.0)) {
    throw std::invalid_argument("latent amplitude range must satisfy 0 <= min <= max <= 1");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(0.5, 2.0);
  std::uniform_real_distribution<double> amp(config.latent_amplitude_min,
                                             config.latent_amplitude_max);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  ClipLatent l;
  l.frequency_hz = freq(rng);
  l.amplitude.resize(pose_size);
  l.phase.resize(pose_size);
  for (std::size_t i = 0; i < pose_size; ++i) {
    l.amplitude[i] = amp(rng);
    l.phase[i] = phase(rng);
  }
  return l;
}

MotionSequence synth_clip(const ConditionVector& condition, const ClipLatent& latent,
                          const CorpusConfig& config) {
  Skeleton skel = Skeleton::default_skeleton();
  const std::size_t pose_size = skel.joint_count() * kRotationChannels;
  condition.validate(condition.frames, pose_size, config.speakers);
  if (condition.feature_dim != config.feature_dim) {
    throw std::invalid_argument("condition feature dim does not match corpus config");
  }
  if (latent.amplitude.size() != pose_size || latent.phase.size() != pose_size) {
    throw std::invalid_argument("latent size does not match the skeleton");
  }
  const World world = make_world(pose_size, config);
  const auto spk = static_cast<std::size_t>(condition.speaker_id);

  // |rest| <= 0.3, |posture| <= 0.2, |speech term| <= 1.5 * 0.25 * 4,
  // |latent| <= 1 (checked in synth_latent): every angle stays inside [-pi, pi].
  std::vector<double> values(condition.frames * pose_size);
  for (std::size_t f = 0; f < condition.frames; ++f) {
    const double time = static_cast<double>(f) / config.frame_rate;
    for (std::size_t i = 0; i < pose_size; ++i) {
      double speech = 0.0;
      for (std::size_t k = 0; k < config.feature_dim; ++k) {
        speech += world.mixing[i * config.feature_dim + k] * condition.feature(f, k);
      }
      values[f * pose_size + i] =
          world.rest[i] + world.posture[spk * pose_size + i] +
          world.style[spk * pose_size + i] * speech +
          latent.amplitude[i] * std::sin(kTwoPi * latent.frequency_hz * time + latent.phase[i]);
    }
  }
  return MotionSequence(std::move(skel), condition.frames, std::move(values), config.frame_rate,
                        condition);
}

SyntheticCorpus synth_corpus(std::uint64_t seed, std::size_t n_clips, std::size_t frames,
                             const CorpusConfig& config) {
  if (n_clips < 1) throw std::invalid_argument("corpus needs at least one clip");
  if (frames < 2) throw std::invalid_argument("corpus clips need at least two frames");
  const std::size_t pose_size = Skeleton::default_skeleton().joint_count() * kRotationChannels;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> speaker(0, config.speakers - 1);
  SyntheticCorpus corpus;
  corpus.generator_seed = seed;
  std::vector<double> previous_last(pose_size, 0.0);
  for (std::size_t i = 0; i < n_clips; ++i) {
    const std::uint64_t cond_seed = rng();
    const std::uint64_t latent_seed = rng();
    ConditionVector cond = synth_condition(cond_seed, frames, speaker(rng), config);
    cond.seed_pose = previous_last;
    ClipLatent latent = synth_latent(latent_seed, pose_size, config);
    MotionSequence motion = synth_clip(cond, latent, config);
    previous_last.assign(motion.values().end() - static_cast<std::ptrdiff_t>(pose_size),
                         motion.values().end());
    corpus.clips.push_back({std::move(motion), std::move(cond), std::move(latent)});
  }
  return corpus;
}

std::vector<TrainingClip> SyntheticCorpus::training_clips() const {
  std::vector<TrainingClip> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back({c.motion.to_tensor(), c.condition});
  return out;
}

}  // namespace gestinv
