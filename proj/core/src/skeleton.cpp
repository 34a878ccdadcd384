#include "gestinv/skeleton.hpp"

#include <cstdint>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace gestinv {

MirrorMap MirrorMap::raw() const {
  MirrorMap m;
  m.pairs = pairs;
  return m;
}

Skeleton::Skeleton(std::vector<Joint> joints, std::string rotation_order, MirrorMap mirror)
    : joints_(std::move(joints)),
      rotation_order_(std::move(rotation_order)),
      mirror_(std::move(mirror)) {
  if (joints_.empty()) throw std::invalid_argument("skeleton needs at least one joint");
  if (rotation_order_.size() != kRotationChannels ||
      std::set<char>(rotation_order_.begin(), rotation_order_.end()) !=
          std::set<char>{'X', 'Y', 'Z'}) {
    throw std::invalid_argument("rotation order must be a permutation of XYZ, got '" +
                                rotation_order_ + "'");
  }
  std::size_t roots = 0;
  std::set<std::string> names;
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const auto& j = joints_[i];
    if (j.name.empty()) throw std::invalid_argument("joint " + std::to_string(i) + " has no name");
    if (!names.insert(j.name).second) {
      throw std::invalid_argument("duplicate joint name '" + j.name + "'");
    }
    if (j.parent < 0) {
      ++roots;
    } else if (static_cast<std::size_t>(j.parent) >= i) {
      throw std::invalid_argument("joint '" + j.name + "' must come after its parent");
    }
  }
  if (roots != 1) {
    throw std::invalid_argument("skeleton needs exactly one root, found " + std::to_string(roots));
  }
  if (joints_[0].parent >= 0) throw std::invalid_argument("joint 0 must be the root");

  std::set<std::size_t> used;
  for (auto [l, r] : mirror_.pairs) {
    if (l >= joints_.size() || r >= joints_.size()) {
      throw std::invalid_argument("mirror pair (" + std::to_string(l) + ", " + std::to_string(r) +
                                  ") references a missing joint");
    }
    if (l == r || !used.insert(l).second || !used.insert(r).second) {
      throw std::invalid_argument("mirror pairs must be disjoint");
    }
  }
  for (double s : mirror_.sign_flip) {
    if (s != 1.0 && s != -1.0) throw std::invalid_argument("mirror sign flips must be +1 or -1");
  }
}

Skeleton Skeleton::default_skeleton() {
  // Offsets in centimetres, Y up, X towards the character's left.
  std::vector<Joint> joints = {
      {"root", -1, {0.0, 95.0, 0.0}},
      {"spine", 0, {0.0, 10.0, 0.0}},
      {"spine1", 1, {0.0, 15.0, 0.0}},
      {"neck", 2, {0.0, 20.0, 0.0}},
      {"head", 3, {0.0, 10.0, 0.0}},
      {"jaw", 4, {0.0, -3.0, 8.0}},
      {"l_shoulder", 2, {15.0, 15.0, 0.0}},
      {"l_elbow", 6, {28.0, 0.0, 0.0}},
      {"l_wrist", 7, {25.0, 0.0, 0.0}},
      {"r_shoulder", 2, {-15.0, 15.0, 0.0}},
      {"r_elbow", 9, {-28.0, 0.0, 0.0}},
      {"r_wrist", 10, {-25.0, 0.0, 0.0}},
      {"l_hip", 0, {10.0, -5.0, 0.0}},
      {"l_knee", 12, {0.0, -45.0, 0.0}},
      {"r_hip", 0, {-10.0, -5.0, 0.0}},
      {"r_knee", 14, {0.0, -45.0, 0.0}},
  };
  const std::string order = "ZXY";
  MirrorMap mirror;
  mirror.pairs = {{6, 9}, {7, 10}, {8, 11}};
  mirror.sign_flip = sagittal_sign_flip(order);
  return Skeleton(std::move(joints), order, std::move(mirror));
}

std::optional<std::size_t> Skeleton::find(const std::string& name) const {
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    if (joints_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t Skeleton::index_of(const std::string& name) const {
  if (auto i = find(name)) return *i;
  throw std::invalid_argument("unknown joint '" + name + "'");
}

std::string Skeleton::fingerprint() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& j : joints_) {
    mix(j.name.data(), j.name.size());
    const std::int32_t parent = j.parent;
    mix(&parent, sizeof parent);
    mix(j.offset.data(), sizeof(double) * 3);
  }
  mix(rotation_order_.data(), rotation_order_.size());
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

bool operator==(const Joint& a, const Joint& b) {
  return a.name == b.name && a.parent == b.parent && a.offset == b.offset;
}

bool operator==(const MirrorMap& a, const MirrorMap& b) {
  return a.pairs == b.pairs && a.sign_flip == b.sign_flip;
}

bool operator==(const Skeleton& a, const Skeleton& b) {
  return a.joints_ == b.joints_ && a.rotation_order_ == b.rotation_order_ &&
         a.mirror_ == b.mirror_;
}

std::array<double, kRotationChannels> sagittal_sign_flip(const std::string& rotation_order) {
  std::array<double, kRotationChannels> flip{1.0, 1.0, 1.0};
  for (std::size_t r = 0; r < kRotationChannels && r < rotation_order.size(); ++r) {
    flip[r] = rotation_order[r] == 'X' ? 1.0 : -1.0;
  }
  return flip;
}

}  // namespace gestinv
