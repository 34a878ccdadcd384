#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gestinv {

inline constexpr std::size_t kRotationChannels = 3;

// Left/right joint pairing used by the symmetry loss. sign_flip is applied
// per rotation channel when the right joint is reflected onto the left one.
struct MirrorMap {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::array<double, kRotationChannels> sign_flip{1.0, 1.0, 1.0};

  bool empty() const noexcept { return pairs.empty(); }
  // Same pairs, raw channel comparison (all signs +1).
  MirrorMap raw() const;
};

struct Joint {
  std::string name;
  int parent = -1;  // -1 for the root
  std::array<double, 3> offset{0.0, 0.0, 0.0};
};

class Skeleton {
 public:
  // Validates topology (single root, parents precede children) and mirror
  // pairs; throws std::invalid_argument otherwise.
  Skeleton(std::vector<Joint> joints, std::string rotation_order, MirrorMap mirror);

  // 16-joint upper-body-centric rig with arm mirror pairs.
  static Skeleton default_skeleton();

  std::size_t joint_count() const noexcept { return joints_.size(); }
  std::size_t channel_count() const noexcept { return kRotationChannels; }
  const std::vector<Joint>& joints() const noexcept { return joints_; }
  const Joint& joint(std::size_t i) const { return joints_.at(i); }
  // Axis letters, e.g. "ZXY": channel r rotates about rotation_order()[r].
  const std::string& rotation_order() const noexcept { return rotation_order_; }
  const MirrorMap& mirror() const noexcept { return mirror_; }

  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  std::string fingerprint() const;

  friend bool operator==(const Skeleton& a, const Skeleton& b);

 private:
  std::vector<Joint> joints_;
  std::string rotation_order_;
  MirrorMap mirror_;
};

bool operator==(const Joint& a, const Joint& b);
bool operator==(const MirrorMap& a, const MirrorMap& b);

// Default sign flips for reflection across the sagittal (YZ) plane:
// rotations about X keep their sense, rotations about Y and Z reverse.
std::array<double, kRotationChannels> sagittal_sign_flip(const std::string& rotation_order);

}  // namespace gestinv
