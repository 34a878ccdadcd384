#include "gestinv/motion_io.hpp"

#include <cmath>
#include <numbers>

#include "binary_io.hpp"

namespace gestinv {

namespace {

constexpr char kMagic[4] = {'G', 'M', 'O', 'T'};
constexpr std::uint16_t kFlagCondition = 1u << 0;

}  // namespace

std::vector<unsigned char> encode_gmo(const MotionSequence& motion) {
  binary::Writer w;
  const auto& skel = motion.skeleton();
  const auto& cond = motion.condition();

  w.put_bytes(kMagic, 4);
  w.put<std::uint16_t>(kGmoVersion);
  w.put<std::uint16_t>(cond ? kFlagCondition : 0);

  w.put<std::uint32_t>(static_cast<std::uint32_t>(skel.joint_count()));
  for (const auto& j : skel.joints()) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(j.name.size()));
    w.put_bytes(j.name.data(), j.name.size());
    w.put<std::int32_t>(j.parent);
    for (double o : j.offset) w.put(o);
  }
  w.put_bytes(skel.rotation_order().data(), kRotationChannels);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(skel.mirror().pairs.size()));
  for (auto [l, r] : skel.mirror().pairs) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r));
  }
  for (double s : skel.mirror().sign_flip) w.put<std::int8_t>(s < 0 ? -1 : 1);

  w.put(motion.frame_rate());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(motion.frames()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kRotationChannels));
  w.put_doubles(motion.values());

  if (cond) {
    w.put<std::int32_t>(cond->speaker_id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(cond->feature_dim));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(cond->frames));
    w.put_doubles(cond->speech_features);
    w.put_doubles(cond->seed_pose);
  }
  return w.bytes();
}

MotionSequence decode_gmo(std::vector<unsigned char> bytes) {
  binary::Reader r(std::move(bytes));
  if (r.get_string(4, "magic") != std::string(kMagic, 4)) {
    throw ParseError("not a .gmo file: bad magic at byte offset 0", 0);
  }
  const auto version_at = r.offset();
  const auto version = r.get<std::uint16_t>("version");
  if (version != kGmoVersion) {
    throw ParseError("unsupported .gmo version " + std::to_string(version) + " at byte offset " +
                         std::to_string(version_at),
                     version_at);
  }
  const auto flags = r.get<std::uint16_t>("flags");

  const auto joint_count = r.get<std::uint32_t>("joint count");
  std::vector<Joint> joints;
  joints.reserve(std::min<std::uint32_t>(joint_count, 4096));
  for (std::uint32_t i = 0; i < joint_count; ++i) {
    Joint j;
    const auto len = r.get<std::uint16_t>("joint name length");
    j.name = r.get_string(len, "joint name");
    j.parent = r.get<std::int32_t>("joint parent");
    for (auto& o : j.offset) o = r.get<double>("joint offset");
    joints.push_back(std::move(j));
  }
  std::string order = r.get_string(kRotationChannels, "rotation order");
  MirrorMap mirror;
  const auto pair_count = r.get<std::uint32_t>("mirror pair count");
  for (std::uint32_t i = 0; i < pair_count; ++i) {
    const auto left = r.get<std::uint32_t>("mirror pair");
    const auto right = r.get<std::uint32_t>("mirror pair");
    mirror.pairs.emplace_back(left, right);
  }
  for (auto& s : mirror.sign_flip) s = r.get<std::int8_t>("mirror sign flip") < 0 ? -1.0 : 1.0;

  const auto skeleton_end = r.offset();
  std::optional<Skeleton> skeleton;
  try {
    skeleton.emplace(std::move(joints), std::move(order), std::move(mirror));
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("invalid skeleton block ending at byte offset ") +
                         std::to_string(skeleton_end) + ": " + e.what(),
                     skeleton_end);
  }

  const double frame_rate = r.get<double>("frame rate");
  const auto frames = r.get<std::uint32_t>("frame count");
  const auto channels_at = r.offset();
  const auto channels = r.get<std::uint32_t>("channel count");
  if (channels != kRotationChannels) {
    throw ParseError("unsupported channel count " + std::to_string(channels) +
                         " at byte offset " + std::to_string(channels_at),
                     channels_at);
  }
  const auto values_at = r.offset();
  auto values =
      r.get_doubles(static_cast<std::size_t>(frames) * skeleton->joint_count() * channels,
                    "frame data");
  for (auto& v : values) {
    if (!std::isfinite(v)) {
      throw ParseError("non-finite angle in frame block starting at byte offset " +
                           std::to_string(values_at),
                       values_at);
    }
    // Out-of-range angles are accepted but folded back.
    if (std::abs(v) > 2.0 * std::numbers::pi) v = wrap_angle(v);
  }

  std::optional<ConditionVector> cond;
  if (flags & kFlagCondition) {
    ConditionVector c;
    c.speaker_id = r.get<std::int32_t>("speaker id");
    c.feature_dim = r.get<std::uint32_t>("feature dim");
    c.frames = r.get<std::uint32_t>("condition frames");
    c.speech_features = r.get_doubles(c.frames * c.feature_dim, "speech features");
    c.seed_pose = r.get_doubles(skeleton->joint_count() * kRotationChannels, "seed pose");
    cond = std::move(c);
  }
  if (!r.at_end()) {
    throw ParseError("trailing bytes after .gmo payload at byte offset " +
                         std::to_string(r.offset()),
                     r.offset());
  }
  try {
    return MotionSequence(std::move(*skeleton), frames, std::move(values), frame_rate,
                          std::move(cond));
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("invalid motion: ") + e.what(), values_at);
  }
}

void save_motion(const MotionSequence& motion, const std::filesystem::path& path) {
  binary::write_file(path, encode_gmo(motion));
}

MotionSequence load_motion(const std::filesystem::path& path) {
  return decode_gmo(binary::read_file(path));
}

}  // namespace gestinv
