#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gestinv/motion.hpp"

namespace gestinv {

inline constexpr std::uint16_t kGmoVersion = 1;

// Native .gmo container: lossless little-endian binary (see docs/gmo-format.md).
std::vector<unsigned char> encode_gmo(const MotionSequence& motion);
// Throws ParseError carrying the byte offset of the first bad field.
MotionSequence decode_gmo(std::vector<unsigned char> bytes);

void save_motion(const MotionSequence& motion, const std::filesystem::path& path);
MotionSequence load_motion(const std::filesystem::path& path);

// BVH subset: rotation-only joints (root gains three zero position
// channels), degrees with six decimals, frame time 1 / frame_rate.
std::string write_bvh(const MotionSequence& motion);
// Rejects scale channels, multiple roots and mixed rotation orders.
// Angles come back in radians wrapped to (-pi, pi]. Throws ParseError with
// the 1-based line number.
MotionSequence read_bvh(const std::string& text);

void export_bvh(const MotionSequence& motion, const std::filesystem::path& path);
MotionSequence import_bvh(const std::filesystem::path& path);

}  // namespace gestinv
