#pragma once

#include <span>
#include <string>
#include <vector>

#include "gestinv/skeleton.hpp"
#include "gestinv/tensor.hpp"

namespace gestinv {

enum class LossKind { kFrameJoint, kMotionRange, kVelocity, kSymmetry };
enum class Direction { kMinimize, kMaximize };
// Mirrored applies the skeleton's sign flips to the right joint; raw
// compares channel values as they are.
enum class SymmetryMode { kMirrored, kRaw };

// One editing goal. Angles are radians; EditSpec JSON uses degrees.
struct EditSpec {
  LossKind kind = LossKind::kMotionRange;
  std::vector<std::size_t> frames;  // frame_joint only
  std::vector<std::size_t> joints;  // frame_joint only, skeleton indices
  std::vector<double> targets;      // joints.size() x 3, frame_joint only
  Direction direction = Direction::kMinimize;
  double weight = 1.0;
  SymmetryMode symmetry = SymmetryMode::kMirrored;

  // Throws std::invalid_argument naming the offending field or index.
  void validate(const Skeleton& skeleton, std::size_t frames) const;
};

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);
std::string to_string(Direction direction);
Direction direction_from_string(const std::string& name);
std::string to_string(SymmetryMode mode);
SymmetryMode symmetry_mode_from_string(const std::string& name);

// Euler angles of every joint. Rotations are stored as Euler angles, so this
// is the identity (kept as an operator so other representations can plug in).
ad::Tensor euler(const ad::Tensor& x0);

// Forward differences x[f+1] - x[f]; the last frame is zero. Needs F >= 2.
ad::Tensor vel(const ad::Tensor& x0);

// All losses take x0 as [F, J, R] and return a scalar tensor.
ad::Tensor loss_frame_joint(const ad::Tensor& x0, const EditSpec& spec);
ad::Tensor loss_motion_range(const ad::Tensor& x0, Direction direction);
ad::Tensor loss_velocity(const ad::Tensor& x0, Direction direction);
ad::Tensor loss_symmetry(const ad::Tensor& x0, const MirrorMap& mirror);

// weight * loss of the spec's kind.
ad::Tensor edit_loss(const ad::Tensor& x0, const EditSpec& spec, const Skeleton& skeleton);
// Weighted sum over several specs.
ad::Tensor edit_loss(const ad::Tensor& x0, std::span<const EditSpec> specs,
                     const Skeleton& skeleton);

}  // namespace gestinv
