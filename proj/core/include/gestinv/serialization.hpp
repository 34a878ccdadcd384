#pragma once

// JSON forms of the engine's value types. Angles are radians everywhere
// except in EditSpec documents, which are authored in degrees.

#include <string>
#include <vector>

#include "json.hpp"

#include "gestinv/condition.hpp"
#include "gestinv/denoiser.hpp"
#include "gestinv/losses.hpp"
#include "gestinv/motion.hpp"
#include "gestinv/schedule.hpp"
#include "gestinv/skeleton.hpp"

namespace gestinv {

using Json = nlohmann::json;

// {total_steps, beta_start, beta_end, spacing, step_map}; total_steps is the
// base schedule length and derived arrays are rebuilt on load.
Json schedule_to_json(const VarianceSchedule& schedule);
VarianceSchedule schedule_from_json(const Json& j);

Json condition_to_json(const ConditionVector& c);
ConditionVector condition_from_json(const Json& j);

Json skeleton_to_json(const Skeleton& s);
Skeleton skeleton_from_json(const Json& j);

// {skeleton, frame_rate, frames: F x J x 3 nested arrays, condition?}.
Json motion_to_json(const MotionSequence& m);
MotionSequence motion_from_json(const Json& j);

// One spec object, or an array of them for a weighted composite. Joints are
// referenced by name. Authored files carry "targets_deg"; the HTTP API uses
// radians under "targets".
enum class AngleUnit { kDegrees, kRadians };
Json edit_spec_to_json(const EditSpec& spec, const Skeleton& skeleton,
                       AngleUnit unit = AngleUnit::kDegrees);
EditSpec edit_spec_from_json(const Json& j, const Skeleton& skeleton,
                             AngleUnit unit = AngleUnit::kDegrees);
std::vector<EditSpec> edit_specs_from_json(const Json& j, const Skeleton& skeleton,
                                           AngleUnit unit = AngleUnit::kDegrees);

Json checkpoint_to_json(const DenoiserParams& params, const VarianceSchedule& schedule);
Checkpoint checkpoint_from_json(const Json& j);

// Reads a JSON file; parse failures become ParseError with the byte offset.
Json read_json_file(const std::string& path);

}  // namespace gestinv
