#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gestinv/error.hpp"
#include "gestinv/motion_io.hpp"

namespace gestinv {

namespace {

constexpr double kDegPerRad = 180.0 / std::numbers::pi;

void format_fixed(std::ostringstream& os, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  // Avoid "-0.000000" so zero motion exports as plain zeros.
  if (std::string_view(buf) == "-0.000000") {
    os << "0.000000";
  } else {
    os << buf;
  }
}

std::vector<std::vector<std::size_t>> children_of(const Skeleton& skel) {
  std::vector<std::vector<std::size_t>> children(skel.joint_count());
  for (std::size_t i = 1; i < skel.joint_count(); ++i) {
    children[static_cast<std::size_t>(skel.joint(i).parent)].push_back(i);
  }
  return children;
}

void write_joint(std::ostringstream& os, const Skeleton& skel,
                 const std::vector<std::vector<std::size_t>>& children, std::size_t j, int depth,
                 std::vector<std::size_t>& order) {
  const std::string indent(static_cast<std::size_t>(depth), '\t');
  const auto& joint = skel.joint(j);
  os << indent << (j == 0 ? "ROOT " : "JOINT ") << joint.name << "\n" << indent << "{\n";
  os << indent << "\tOFFSET ";
  for (std::size_t k = 0; k < 3; ++k) {
    if (k) os << ' ';
    format_fixed(os, joint.offset[k]);
  }
  os << "\n" << indent << "\tCHANNELS ";
  if (j == 0) {
    os << "6 Xposition Yposition Zposition";
  } else {
    os << "3";
  }
  for (char axis : skel.rotation_order()) os << ' ' << axis << "rotation";
  os << "\n";
  order.push_back(j);
  if (children[j].empty()) {
    os << indent << "\tEnd Site\n" << indent << "\t{\n" << indent
       << "\t\tOFFSET 0.000000 0.000000 0.000000\n" << indent << "\t}\n";
  }
  for (auto c : children[j]) write_joint(os, skel, children, c, depth + 1, order);
  os << indent << "}\n";
}

struct Tokenizer {
  explicit Tokenizer(const std::string& text) : in(text) {}

  // Next whitespace-delimited token; empty string at end of input.
  std::string next() {
    while (true) {
      std::string tok;
      if (line_stream >> tok) return tok;
      std::string line;
      if (!std::getline(in, line)) return {};
      ++line_no;
      line_stream.clear();
      line_stream.str(line);
    }
  }

  std::string expect_any(const char* what) {
    auto tok = next();
    if (tok.empty()) fail(std::string("unexpected end of file, expected ") + what);
    return tok;
  }

  void expect(const std::string& literal) {
    auto tok = next();
    if (tok != literal) fail("expected '" + literal + "', found '" + tok + "'");
  }

  double number(const char* what) {
    auto tok = expect_any(what);
    try {
      std::size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      fail(std::string("expected a number for ") + what + ", found '" + tok + "'");
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("BVH line " + std::to_string(line_no) + ": " + msg, line_no);
  }

  std::istringstream in;
  std::istringstream line_stream;
  std::size_t line_no = 0;
};

struct ParsedJoint {
  Joint joint;
  std::vector<std::string> channels;
};

void parse_joint(Tokenizer& tz, std::vector<ParsedJoint>& out, int parent) {
  ParsedJoint pj;
  pj.joint.name = tz.expect_any("joint name");
  pj.joint.parent = parent;
  tz.expect("{");
  const int index = static_cast<int>(out.size());
  out.push_back(pj);
  while (true) {
    auto tok = tz.expect_any("joint body");
    if (tok == "OFFSET") {
      for (auto& o : out[index].joint.offset) o = tz.number("OFFSET");
    } else if (tok == "CHANNELS") {
      const double count = tz.number("channel count");
      if (count < 0 || count != std::floor(count)) tz.fail("bad channel count");
      for (int c = 0; c < static_cast<int>(count); ++c) {
        auto ch = tz.expect_any("channel name");
        if (ch.find("scale") != std::string::npos || ch.find("Scale") != std::string::npos) {
          tz.fail("unsupported scale channel '" + ch + "'");
        }
        if (ch != "Xposition" && ch != "Yposition" && ch != "Zposition" && ch != "Xrotation" &&
            ch != "Yrotation" && ch != "Zrotation") {
          tz.fail("unsupported channel '" + ch + "'");
        }
        out[index].channels.push_back(ch);
      }
    } else if (tok == "JOINT") {
      parse_joint(tz, out, index);
    } else if (tok == "End") {
      tz.expect("Site");
      tz.expect("{");
      tz.expect("OFFSET");
      for (int k = 0; k < 3; ++k) tz.number("End Site OFFSET");
      tz.expect("}");
    } else if (tok == "}") {
      return;
    } else {
      tz.fail("unexpected token '" + tok + "' in joint '" + out[index].joint.name + "'");
    }
  }
}

}  // namespace

std::string write_bvh(const MotionSequence& motion) {
  const auto& skel = motion.skeleton();
  std::ostringstream os;
  os << "HIERARCHY\n";
  std::vector<std::size_t> order;
  write_joint(os, skel, children_of(skel), 0, 0, order);
  os << "MOTION\nFrames: " << motion.frames() << "\nFrame Time: ";
  format_fixed(os, 1.0 / motion.frame_rate());
  os << "\n";
  for (std::size_t f = 0; f < motion.frames(); ++f) {
    os << "0.000000 0.000000 0.000000";
    for (auto j : order) {
      for (std::size_t r = 0; r < kRotationChannels; ++r) {
        os << ' ';
        format_fixed(os, motion.at(f, j, r) * kDegPerRad);
      }
    }
    os << "\n";
  }
  return os.str();
}

MotionSequence read_bvh(const std::string& text) {
  Tokenizer tz(text);
  tz.expect("HIERARCHY");
  std::vector<ParsedJoint> parsed;
  tz.expect("ROOT");
  parse_joint(tz, parsed, -1);

  auto tok = tz.expect_any("MOTION");
  if (tok == "ROOT") tz.fail("multiple roots are not supported");
  if (tok != "MOTION") tz.fail("expected 'MOTION', found '" + tok + "'");
  tz.expect("Frames:");
  const double frames_d = tz.number("frame count");
  if (frames_d < 1 || frames_d != std::floor(frames_d)) tz.fail("bad frame count");
  tz.expect("Frame");
  tz.expect("Time:");
  const double frame_time = tz.number("frame time");
  if (!(frame_time > 0)) tz.fail("frame time must be positive");

  // Rotation order comes from the root and must agree everywhere.
  std::string order;
  for (const auto& ch : parsed[0].channels) {
    if (ch.ends_with("rotation")) order.push_back(ch[0]);
  }
  if (order.size() != kRotationChannels) tz.fail("root must carry three rotation channels");
  for (const auto& pj : parsed) {
    std::string own;
    for (const auto& ch : pj.channels) {
      if (ch.ends_with("rotation")) own.push_back(ch[0]);
    }
    if (own != order) {
      tz.fail("joint '" + pj.joint.name + "' rotation order '" + own + "' differs from root '" +
              order + "'");
    }
  }

  const auto frames = static_cast<std::size_t>(frames_d);
  const auto joint_count = parsed.size();
  std::vector<double> values(frames * joint_count * kRotationChannels);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t j = 0; j < joint_count; ++j) {
      std::size_t r = 0;
      for (const auto& ch : parsed[j].channels) {
        const double v = tz.number("frame value");
        if (ch.ends_with("rotation")) {
          values[(f * joint_count + j) * kRotationChannels + r++] = wrap_angle(v / kDegPerRad);
        }
      }
    }
  }
  if (!tz.next().empty()) tz.fail("trailing data after the last frame");

  std::vector<Joint> joints;
  for (auto& pj : parsed) joints.push_back(pj.joint);

  // Pair l_/r_ (or left/right) prefixed joint names.
  MirrorMap mirror;
  mirror.sign_flip = sagittal_sign_flip(order);
  auto counterpart = [](const std::string& name) -> std::string {
    for (auto [l, r] : {std::pair{"l_", "r_"}, std::pair{"Left", "Right"},
                        std::pair{"left_", "right_"}}) {
      if (name.starts_with(l)) return r + name.substr(std::string(l).size());
    }
    return {};
  };
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const auto other = counterpart(joints[i].name);
    if (other.empty()) continue;
    for (std::size_t k = 0; k < joints.size(); ++k) {
      if (joints[k].name == other) mirror.pairs.emplace_back(i, k);
    }
  }

  double frame_rate = 1.0 / frame_time;
  if (std::abs(frame_rate - std::round(frame_rate)) < 1e-3) frame_rate = std::round(frame_rate);

  try {
    return MotionSequence(Skeleton(std::move(joints), order, std::move(mirror)), frames,
                          std::move(values), frame_rate);
  } catch (const std::invalid_argument& e) {
    tz.fail(e.what());
  }
}

void export_bvh(const MotionSequence& motion, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << write_bvh(motion);
}

MotionSequence import_bvh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return read_bvh(ss.str());
}

}  // namespace gestinv
