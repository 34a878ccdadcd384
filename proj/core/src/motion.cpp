#include "gestinv/motion.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "gestinv/error.hpp"

namespace gestinv {

void ConditionVector::validate(std::size_t expected_frames, std::size_t pose_size,
                               int speaker_count) const {
  if (frames != expected_frames) {
    throw std::invalid_argument("condition has " + std::to_string(frames) +
                                " feature rows, motion has " + std::to_string(expected_frames) +
                                " frames");
  }
  if (speech_features.size() != frames * feature_dim) {
    throw std::invalid_argument("condition speech features do not match frames x feature_dim");
  }
  if (speaker_id < 0 || speaker_id >= speaker_count) {
    throw std::invalid_argument("speaker id " + std::to_string(speaker_id) +
                                " outside vocabulary of " + std::to_string(speaker_count));
  }
  if (seed_pose.size() != pose_size) {
    throw std::invalid_argument("seed pose has " + std::to_string(seed_pose.size()) +
                                " values, expected " + std::to_string(pose_size));
  }
}

MotionSequence::MotionSequence(Skeleton skeleton, std::size_t frames, std::vector<double> values,
                               double frame_rate, std::optional<ConditionVector> condition)
    : skeleton_(std::move(skeleton)),
      frames_(frames),
      values_(std::move(values)),
      frame_rate_(frame_rate),
      condition_(std::move(condition)) {
  if (frames_ < 1) throw std::invalid_argument("motion needs at least one frame");
  if (values_.size() != frames_ * skeleton_.joint_count() * kRotationChannels) {
    throw ShapeError("motion values (" + std::to_string(values_.size()) +
                     ") do not match frames x joints x channels");
  }
  if (!(frame_rate_ > 0.0) || !std::isfinite(frame_rate_)) {
    throw std::invalid_argument("frame rate must be positive");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::invalid_argument("motion contains non-finite angles");
  }
}

MotionSequence MotionSequence::from_tensor(Skeleton skeleton, const ad::Tensor& x,
                                           double frame_rate,
                                           std::optional<ConditionVector> condition) {
  if (x.rank() != 3 || x.dim(1) != skeleton.joint_count() || x.dim(2) != kRotationChannels) {
    throw ShapeError("motion tensor " + ad::shape_string(x.shape()) +
                     " does not fit a skeleton of " + std::to_string(skeleton.joint_count()) +
                     " joints");
  }
  std::vector<double> values(x.data().begin(), x.data().end());
  return MotionSequence(std::move(skeleton), x.dim(0), std::move(values), frame_rate,
                        std::move(condition));
}

ad::Tensor MotionSequence::to_tensor() const {
  return ad::Tensor({frames_, joints(), kRotationChannels}, values_);
}

MotionSequence MotionSequence::with_condition(std::optional<ConditionVector> condition) const {
  MotionSequence copy = *this;
  copy.condition_ = std::move(condition);
  return copy;
}

double wrap_angle(double radians) {
  constexpr double kPi = std::numbers::pi;
  if (radians > -kPi && radians <= kPi) return radians;
  double wrapped = std::remainder(radians, 2.0 * kPi);  // [-pi, pi]
  if (wrapped <= -kPi) wrapped += 2.0 * kPi;
  return wrapped;
}

}  // namespace gestinv
