#pragma once

#include <optional>
#include <vector>

#include "gestinv/condition.hpp"
#include "gestinv/skeleton.hpp"
#include "gestinv/tensor.hpp"

namespace gestinv {

// F x J x R Euler angles (radians) over a skeleton. Immutable value object.
class MotionSequence {
 public:
  MotionSequence(Skeleton skeleton, std::size_t frames, std::vector<double> values,
                 double frame_rate, std::optional<ConditionVector> condition = std::nullopt);

  static MotionSequence from_tensor(Skeleton skeleton, const ad::Tensor& x, double frame_rate,
                                    std::optional<ConditionVector> condition = std::nullopt);

  const Skeleton& skeleton() const noexcept { return skeleton_; }
  std::size_t frames() const noexcept { return frames_; }
  std::size_t joints() const noexcept { return skeleton_.joint_count(); }
  std::size_t channels() const noexcept { return kRotationChannels; }
  double frame_rate() const noexcept { return frame_rate_; }
  const std::vector<double>& values() const noexcept { return values_; }
  const std::optional<ConditionVector>& condition() const noexcept { return condition_; }

  double at(std::size_t f, std::size_t j, std::size_t r) const {
    return values_[(f * joints() + j) * kRotationChannels + r];
  }

  // Detached [F, J, R] tensor.
  ad::Tensor to_tensor() const;

  MotionSequence with_condition(std::optional<ConditionVector> condition) const;

 private:
  Skeleton skeleton_;
  std::size_t frames_;
  std::vector<double> values_;
  double frame_rate_;
  std::optional<ConditionVector> condition_;
};

// Wraps an angle into (-pi, pi].
double wrap_angle(double radians);

}  // namespace gestinv
