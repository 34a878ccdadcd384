#pragma once

#include <cstddef>
#include <vector>

namespace gestinv {

// Conditioning inputs C of the denoiser: per-frame (synthetic) speech
// features, a speaker id and the seed pose that precedes the clip.
struct ConditionVector {
  std::size_t frames = 0;
  std::size_t feature_dim = 0;
  std::vector<double> speech_features;  // frames x feature_dim, row-major
  int speaker_id = 0;
  std::vector<double> seed_pose;  // joints x channels; zeros when there is none

  double feature(std::size_t f, std::size_t c) const {
    return speech_features[f * feature_dim + c];
  }

  // Throws std::invalid_argument on inconsistent extents or ids.
  void validate(std::size_t expected_frames, std::size_t pose_size, int speaker_count) const;

  friend bool operator==(const ConditionVector&, const ConditionVector&) = default;
};

}  // namespace gestinv
