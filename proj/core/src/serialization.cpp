#include "gestinv/serialization.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "gestinv/error.hpp"

namespace gestinv {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr double kDegPerRad = 180.0 / std::numbers::pi;

const Json& field(const Json& j, const char* name) {
  if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
  auto it = j.find(name);
  if (it == j.end()) throw std::invalid_argument(std::string("missing field '") + name + "'");
  return *it;
}

template <typename T>
T get_as(const Json& j, const char* name) {
  try {
    return field(j, name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(std::string("field '") + name + "' has the wrong type");
  }
}

ad::Tensor tensor_from(const Json& j, const char* name, const ad::Shape& shape) {
  auto values = get_as<std::vector<double>>(j, name);
  if (values.size() != ad::shape_size(shape)) {
    throw std::invalid_argument(std::string("parameter '") + name + "' has " +
                                std::to_string(values.size()) + " values, expected " +
                                std::to_string(ad::shape_size(shape)));
  }
  return ad::Tensor(shape, std::move(values));
}

std::vector<double> as_vector(const ad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

const char* targets_key(AngleUnit unit) {
  return unit == AngleUnit::kDegrees ? "targets_deg" : "targets";
}

}  // namespace

Json schedule_to_json(const VarianceSchedule& schedule) {
  return Json{{"total_steps", schedule.base_steps()},
              {"beta_start", schedule.beta_start()},
              {"beta_end", schedule.beta_end()},
              {"spacing", to_string(schedule.spacing())},
              {"step_map", schedule.step_map()}};
}

VarianceSchedule schedule_from_json(const Json& j) {
  const auto base = VarianceSchedule::build(get_as<int>(j, "total_steps"),
                                            get_as<double>(j, "beta_start"),
                                            get_as<double>(j, "beta_end"),
                                            beta_spacing_from_string(get_as<std::string>(j, "spacing")));
  if (!j.contains("step_map")) return base;
  auto map = get_as<std::vector<int>>(j, "step_map");
  if (map == base.step_map()) return base;
  return respace_at(base, std::move(map));
}

Json condition_to_json(const ConditionVector& c) {
  return Json{{"frames", c.frames},
              {"feature_dim", c.feature_dim},
              {"speech_features", c.speech_features},
              {"speaker_id", c.speaker_id},
              {"seed_pose", c.seed_pose}};
}

ConditionVector condition_from_json(const Json& j) {
  ConditionVector c;
  c.frames = get_as<std::size_t>(j, "frames");
  c.feature_dim = get_as<std::size_t>(j, "feature_dim");
  c.speech_features = get_as<std::vector<double>>(j, "speech_features");
  c.speaker_id = get_as<int>(j, "speaker_id");
  c.seed_pose = get_as<std::vector<double>>(j, "seed_pose");
  if (c.speech_features.size() != c.frames * c.feature_dim) {
    throw std::invalid_argument("speech_features must hold frames x feature_dim values");
  }
  return c;
}

Json skeleton_to_json(const Skeleton& s) {
  Json joints = Json::array();
  for (const auto& j : s.joints()) {
    joints.push_back({{"name", j.name}, {"parent", j.parent}, {"offset", j.offset}});
  }
  Json pairs = Json::array();
  for (auto [l, r] : s.mirror().pairs) {
    pairs.push_back({s.joint(l).name, s.joint(r).name});
  }
  return Json{{"joints", joints},
              {"rotation_order", s.rotation_order()},
              {"mirror", {{"pairs", pairs}, {"sign_flip", s.mirror().sign_flip}}}};
}

Skeleton skeleton_from_json(const Json& j) {
  std::vector<Joint> joints;
  const auto& arr = field(j, "joints");
  if (!arr.is_array()) throw std::invalid_argument("'joints' must be an array");
  for (const auto& e : arr) {
    Joint joint;
    joint.name = get_as<std::string>(e, "name");
    joint.parent = get_as<int>(e, "parent");
    joint.offset = get_as<std::array<double, 3>>(e, "offset");
    joints.push_back(std::move(joint));
  }
  auto index = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < joints.size(); ++i) {
      if (joints[i].name == name) return i;
    }
    throw std::invalid_argument("mirror pair names unknown joint '" + name + "'");
  };
  MirrorMap mirror;
  if (j.contains("mirror")) {
    const auto& m = j["mirror"];
    for (const auto& p : get_as<std::vector<std::array<std::string, 2>>>(m, "pairs")) {
      mirror.pairs.emplace_back(index(p[0]), index(p[1]));
    }
    mirror.sign_flip = get_as<std::array<double, kRotationChannels>>(m, "sign_flip");
  }
  return Skeleton(std::move(joints), get_as<std::string>(j, "rotation_order"), std::move(mirror));
}

Json motion_to_json(const MotionSequence& m) {
  Json frames = Json::array();
  for (std::size_t f = 0; f < m.frames(); ++f) {
    Json pose = Json::array();
    for (std::size_t jt = 0; jt < m.joints(); ++jt) {
      pose.push_back({m.at(f, jt, 0), m.at(f, jt, 1), m.at(f, jt, 2)});
    }
    frames.push_back(std::move(pose));
  }
  Json out{{"skeleton", skeleton_to_json(m.skeleton())},
           {"frame_rate", m.frame_rate()},
           {"frames", std::move(frames)}};
  if (m.condition()) out["condition"] = condition_to_json(*m.condition());
  return out;
}

MotionSequence motion_from_json(const Json& j) {
  Skeleton skel = j.contains("skeleton") ? skeleton_from_json(j["skeleton"])
                                         : Skeleton::default_skeleton();
  const auto& frames = field(j, "frames");
  if (!frames.is_array() || frames.empty()) {
    throw std::invalid_argument("'frames' must be a nonempty array");
  }
  std::vector<double> values;
  values.reserve(frames.size() * skel.joint_count() * kRotationChannels);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& pose = frames[f];
    if (!pose.is_array() || pose.size() != skel.joint_count()) {
      throw std::invalid_argument("frame " + std::to_string(f) + " must list " +
                                  std::to_string(skel.joint_count()) + " joints");
    }
    for (const auto& rot : pose) {
      if (!rot.is_array() || rot.size() != kRotationChannels) {
        throw std::invalid_argument("frame " + std::to_string(f) +
                                    ": every joint needs 3 rotation values");
      }
      for (const auto& v : rot) {
        if (!v.is_number()) throw std::invalid_argument("rotation values must be numbers");
        double a = v.get<double>();
        if (std::isfinite(a) && std::abs(a) > 2.0 * std::numbers::pi) a = wrap_angle(a);
        values.push_back(a);
      }
    }
  }
  std::optional<ConditionVector> cond;
  if (j.contains("condition") && !j["condition"].is_null()) cond = condition_from_json(j["condition"]);
  return MotionSequence(std::move(skel), frames.size(), std::move(values),
                        get_as<double>(j, "frame_rate"), std::move(cond));
}

Json edit_spec_to_json(const EditSpec& spec, const Skeleton& skeleton, AngleUnit unit) {
  Json j{{"kind", to_string(spec.kind)}, {"weight", spec.weight}};
  if (spec.direction != Direction::kMinimize || spec.kind == LossKind::kMotionRange ||
      spec.kind == LossKind::kVelocity) {
    j["direction"] = to_string(spec.direction);
  }
  if (spec.kind == LossKind::kFrameJoint) {
    j["frames"] = spec.frames;
    Json names = Json::array();
    for (auto idx : spec.joints) names.push_back(skeleton.joint(idx).name);
    j["joints"] = names;
    const double k_out = unit == AngleUnit::kDegrees ? kDegPerRad : 1.0;
    Json targets = Json::array();
    for (std::size_t k = 0; k < spec.joints.size(); ++k) {
      targets.push_back({spec.targets[3 * k] * k_out, spec.targets[3 * k + 1] * k_out,
                         spec.targets[3 * k + 2] * k_out});
    }
    j[targets_key(unit)] = targets;
  }
  if (spec.kind == LossKind::kSymmetry) j["mode"] = to_string(spec.symmetry);
  return j;
}

EditSpec edit_spec_from_json(const Json& j, const Skeleton& skeleton, AngleUnit unit) {
  EditSpec spec;
  spec.kind = loss_kind_from_string(get_as<std::string>(j, "kind"));
  if (j.contains("direction")) spec.direction = direction_from_string(get_as<std::string>(j, "direction"));
  if (j.contains("weight")) spec.weight = get_as<double>(j, "weight");
  if (j.contains("mode")) spec.symmetry = symmetry_mode_from_string(get_as<std::string>(j, "mode"));
  if (spec.kind == LossKind::kFrameJoint) {
    const auto frames = get_as<std::vector<long long>>(j, "frames");
    for (auto f : frames) {
      if (f < 0) throw std::invalid_argument("frame index " + std::to_string(f) + " is negative");
      spec.frames.push_back(static_cast<std::size_t>(f));
    }
    for (const auto& name : get_as<std::vector<std::string>>(j, "joints")) {
      auto idx = skeleton.find(name);
      if (!idx) throw std::invalid_argument("unknown joint '" + name + "'");
      spec.joints.push_back(*idx);
    }
    const char* key = targets_key(unit);
    const auto targets = get_as<std::vector<std::vector<double>>>(j, key);
    if (targets.size() != spec.joints.size()) {
      throw std::invalid_argument(std::string(key) + " needs one [x, y, z] triple per joint");
    }
    const double k_in = unit == AngleUnit::kDegrees ? 1.0 / kDegPerRad : 1.0;
    for (const auto& t : targets) {
      if (t.size() != kRotationChannels) {
        throw std::invalid_argument(std::string("each ") + key + " entry needs 3 values");
      }
      for (double v : t) spec.targets.push_back(v * k_in);
    }
  }
  return spec;
}

std::vector<EditSpec> edit_specs_from_json(const Json& j, const Skeleton& skeleton,
                                           AngleUnit unit) {
  std::vector<EditSpec> specs;
  if (j.is_array()) {
    for (const auto& e : j) specs.push_back(edit_spec_from_json(e, skeleton, unit));
  } else {
    specs.push_back(edit_spec_from_json(j, skeleton, unit));
  }
  if (specs.empty()) throw std::invalid_argument("edit spec array is empty");
  return specs;
}

Json checkpoint_to_json(const DenoiserParams& params, const VarianceSchedule& schedule) {
  const auto& c = params.config;
  return Json{{"format", "gestinv-checkpoint"},
              {"version", kCheckpointVersion},
              {"config",
               {{"joints", c.joints},
                {"channels", c.channels},
                {"feature_dim", c.feature_dim},
                {"speakers", c.speakers},
                {"time_embed_dim", c.time_embed_dim},
                {"hidden", c.hidden},
                {"max_timestep", c.max_timestep}}},
              {"rng_seed", params.rng_seed},
              {"params",
               {{"w1", as_vector(params.w1)},
                {"b1", as_vector(params.b1)},
                {"w2", as_vector(params.w2)},
                {"b2", as_vector(params.b2)},
                {"w3", as_vector(params.w3)},
                {"b3", as_vector(params.b3)}}},
              {"schedule", schedule_to_json(schedule)},
              {"schedule_fingerprint", schedule.fingerprint()}};
}

Checkpoint checkpoint_from_json(const Json& j) {
  try {
    if (get_as<int>(j, "version") != kCheckpointVersion) {
      throw std::invalid_argument("unsupported checkpoint version " +
                                  std::to_string(get_as<int>(j, "version")));
    }
    const auto& cj = field(j, "config");
    DenoiserConfig c;
    c.joints = get_as<std::size_t>(cj, "joints");
    c.channels = get_as<std::size_t>(cj, "channels");
    c.feature_dim = get_as<std::size_t>(cj, "feature_dim");
    c.speakers = get_as<int>(cj, "speakers");
    c.time_embed_dim = get_as<std::size_t>(cj, "time_embed_dim");
    c.hidden = get_as<std::size_t>(cj, "hidden");
    c.max_timestep = get_as<int>(cj, "max_timestep");
    // init() validates the dims and rebuilds the fixed embedding table.
    DenoiserParams p = DenoiserParams::init(c, get_as<std::uint64_t>(j, "rng_seed"));
    const auto& pj = field(j, "params");
    p.w1 = tensor_from(pj, "w1", {c.input_size(), c.hidden});
    p.b1 = tensor_from(pj, "b1", {c.hidden});
    p.w2 = tensor_from(pj, "w2", {c.hidden, c.hidden});
    p.b2 = tensor_from(pj, "b2", {c.hidden});
    p.w3 = tensor_from(pj, "w3", {c.hidden, c.pose_size()});
    p.b3 = tensor_from(pj, "b3", {c.pose_size()});
    for (const auto* t : p.trainable()) {
      if (!ad::all_finite(*t)) throw std::invalid_argument("checkpoint holds non-finite weights");
    }
    VarianceSchedule schedule = schedule_from_json(field(j, "schedule"));
    if (get_as<std::string>(j, "schedule_fingerprint") != schedule.fingerprint()) {
      throw std::invalid_argument("checkpoint schedule fingerprint does not match its schedule");
    }
    return {std::move(p), std::move(schedule)};
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("invalid checkpoint: ") + e.what());
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path + "': " + e.what(), e.byte);
  }
}

}  // namespace gestinv
