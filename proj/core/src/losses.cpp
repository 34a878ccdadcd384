#include "gestinv/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "gestinv/error.hpp"

namespace gestinv {

namespace {

using ad::Tensor;

void require_motion(const Tensor& x0, const char* what) {
  if (x0.rank() != 3) {
    throw ShapeError(std::string(what) + " expects [F, J, R], got " + ad::shape_string(x0.shape()));
  }
}

double sign_of(Direction d) { return d == Direction::kMinimize ? 1.0 : -1.0; }

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kFrameJoint: return "frame_joint";
    case LossKind::kMotionRange: return "motion_range";
    case LossKind::kVelocity: return "velocity";
    case LossKind::kSymmetry: return "symmetry";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "frame_joint") return LossKind::kFrameJoint;
  if (name == "motion_range") return LossKind::kMotionRange;
  if (name == "velocity") return LossKind::kVelocity;
  if (name == "symmetry") return LossKind::kSymmetry;
  throw std::invalid_argument("unknown loss kind '" + name + "'");
}

std::string to_string(Direction direction) {
  return direction == Direction::kMinimize ? "minimize" : "maximize";
}

Direction direction_from_string(const std::string& name) {
  if (name == "minimize") return Direction::kMinimize;
  if (name == "maximize") return Direction::kMaximize;
  throw std::invalid_argument("unknown direction '" + name + "'");
}

std::string to_string(SymmetryMode mode) {
  return mode == SymmetryMode::kMirrored ? "mirrored" : "raw";
}

SymmetryMode symmetry_mode_from_string(const std::string& name) {
  if (name == "mirrored") return SymmetryMode::kMirrored;
  if (name == "raw") return SymmetryMode::kRaw;
  throw std::invalid_argument("unknown symmetry mode '" + name + "'");
}

void EditSpec::validate(const Skeleton& skeleton, std::size_t frame_count) const {
  if (!(weight > 0.0) || !std::isfinite(weight)) {
    throw std::invalid_argument("weight must be a positive finite number");
  }
  if (direction == Direction::kMaximize && kind != LossKind::kMotionRange &&
      kind != LossKind::kVelocity) {
    throw std::invalid_argument("direction 'maximize' is only allowed for motion_range and velocity");
  }
  switch (kind) {
    case LossKind::kFrameJoint:
      if (frames.empty()) throw std::invalid_argument("frame_joint needs at least one frame");
      if (joints.empty()) throw std::invalid_argument("frame_joint needs at least one joint");
      for (auto f : frames) {
        if (f >= frame_count) {
          throw std::invalid_argument("frame index " + std::to_string(f) + " out of range [0, " +
                                      std::to_string(frame_count) + ")");
        }
      }
      for (auto j : joints) {
        if (j >= skeleton.joint_count()) {
          throw std::invalid_argument("joint index " + std::to_string(j) + " out of range [0, " +
                                      std::to_string(skeleton.joint_count()) + ")");
        }
      }
      if (targets.size() != joints.size() * kRotationChannels) {
        throw std::invalid_argument("targets must hold " +
                                    std::to_string(joints.size() * kRotationChannels) +
                                    " values (joints x 3), got " + std::to_string(targets.size()));
      }
      for (double v : targets) {
        if (!std::isfinite(v)) throw std::invalid_argument("targets must be finite");
      }
      break;
    case LossKind::kVelocity:
      if (frame_count < 2) throw std::invalid_argument("velocity loss needs at least two frames");
      break;
    case LossKind::kSymmetry:
      if (skeleton.mirror().empty()) {
        throw std::invalid_argument("symmetry loss needs a skeleton with mirror pairs");
      }
      break;
    case LossKind::kMotionRange:
      break;
  }
}

Tensor euler(const Tensor& x0) { return x0; }

Tensor vel(const Tensor& x0) {
  require_motion(x0, "vel");
  const auto frames = x0.dim(0);
  if (frames < 2) throw std::invalid_argument("vel needs at least two frames");
  const Tensor parts[2] = {
      ad::slice(x0, 0, 1, frames) - ad::slice(x0, 0, 0, frames - 1),
      Tensor::zeros({1, x0.dim(1), x0.dim(2)}),
  };
  return ad::concat(parts, 0);
}

Tensor loss_frame_joint(const Tensor& x0, const EditSpec& spec) {
  require_motion(x0, "loss_frame_joint");
  if (spec.kind != LossKind::kFrameJoint) throw std::invalid_argument("spec is not frame_joint");
  for (auto f : spec.frames) {
    if (f >= x0.dim(0)) {
      throw std::out_of_range("frame index " + std::to_string(f) + " out of range");
    }
  }
  for (auto j : spec.joints) {
    if (j >= x0.dim(1)) {
      throw std::out_of_range("joint index " + std::to_string(j) + " out of range");
    }
  }
  if (spec.targets.size() != spec.joints.size() * x0.dim(2)) {
    throw ShapeError("targets size does not match joints x channels");
  }
  const Tensor picked = ad::take(ad::take(x0, 0, spec.frames), 1, spec.joints);
  const Tensor target({spec.joints.size(), x0.dim(2)}, spec.targets);
  return ad::mean(ad::square(picked - ad::broadcast(target, spec.frames.size())));
}

Tensor loss_motion_range(const Tensor& x0, Direction direction) {
  require_motion(x0, "loss_motion_range");
  return ad::scale(ad::mean(ad::square(euler(x0))), sign_of(direction));
}

Tensor loss_velocity(const Tensor& x0, Direction direction) {
  return ad::scale(ad::mean(ad::square(vel(x0))), sign_of(direction));
}

Tensor loss_symmetry(const Tensor& x0, const MirrorMap& mirror) {
  require_motion(x0, "loss_symmetry");
  if (mirror.empty()) throw std::invalid_argument("symmetry loss needs mirror pairs");
  if (x0.dim(2) != kRotationChannels) throw ShapeError("symmetry loss expects R = 3");
  std::vector<std::size_t> left, right;
  for (auto [l, r] : mirror.pairs) {
    if (l >= x0.dim(1) || r >= x0.dim(1)) {
      throw std::out_of_range("mirror pair (" + std::to_string(l) + ", " + std::to_string(r) +
                              ") out of range");
    }
    left.push_back(l);
    right.push_back(r);
  }
  std::vector<double> signs;
  signs.reserve(left.size() * kRotationChannels);
  for (std::size_t p = 0; p < left.size(); ++p) {
    signs.insert(signs.end(), mirror.sign_flip.begin(), mirror.sign_flip.end());
  }
  const Tensor flip = ad::broadcast(Tensor({left.size(), kRotationChannels}, std::move(signs)),
                                    x0.dim(0));
  return ad::mean(ad::square(ad::take(x0, 1, left) - ad::take(x0, 1, right) * flip));
}

Tensor edit_loss(const Tensor& x0, const EditSpec& spec, const Skeleton& skeleton) {
  Tensor raw;
  switch (spec.kind) {
    case LossKind::kFrameJoint: raw = loss_frame_joint(x0, spec); break;
    case LossKind::kMotionRange: raw = loss_motion_range(x0, spec.direction); break;
    case LossKind::kVelocity: raw = loss_velocity(x0, spec.direction); break;
    case LossKind::kSymmetry:
      raw = loss_symmetry(x0, spec.symmetry == SymmetryMode::kMirrored ? skeleton.mirror()
                                                                       : skeleton.mirror().raw());
      break;
  }
  return spec.weight == 1.0 ? raw : ad::scale(raw, spec.weight);
}

Tensor edit_loss(const Tensor& x0, std::span<const EditSpec> specs, const Skeleton& skeleton) {
  if (specs.empty()) throw std::invalid_argument("composite edit needs at least one spec");
  Tensor total = edit_loss(x0, specs[0], skeleton);
  for (std::size_t i = 1; i < specs.size(); ++i) total = total + edit_loss(x0, specs[i], skeleton);
  return total;
}

}  // namespace gestinv
