#include "job_service.hpp"

#include <cstdlib>
#include <set>

#include "gestinv/error.hpp"
#include "pipeline/pipeline.hpp"

namespace gestinv::service {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw RequestError(400, msg); }

void allow_only(const Json& payload, std::initializer_list<const char*> keys) {
  if (!payload.is_object()) bad("payload must be a JSON object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, value] : payload.items()) {
    if (!allowed.count(key)) bad("unknown payload field '" + key + "'");
  }
}

template <typename T>
T opt(const Json& payload, const char* key, T fallback) {
  auto it = payload.find(key);
  if (it == payload.end() || it->is_null()) return fallback;
  try {
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_integer()) throw std::invalid_argument("not an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (it->template get<long long>() < 0) throw std::invalid_argument("negative");
      }
    }
    return it->template get<T>();
  } catch (const std::exception&) {
    bad(std::string("payload field '") + key + "' has the wrong type or range");
  }
}

const Json& required(const Json& payload, const char* key) {
  auto it = payload.find(key);
  if (it == payload.end() || it->is_null()) bad(std::string("payload field '") + key + "' is required");
  return *it;
}

ConditionVector parse_condition(const Json& j, const DenoiserParams& params, const char* key) {
  try {
    auto c = condition_from_json(j);
    c.validate(c.frames, params.config.pose_size(), params.config.speakers);
    if (c.feature_dim != params.config.feature_dim) {
      throw std::invalid_argument("feature_dim " + std::to_string(c.feature_dim) +
                                  " does not match the model's " +
                                  std::to_string(params.config.feature_dim));
    }
    return c;
  } catch (const std::exception& e) {
    bad(std::string(key) + ": " + e.what());
  }
}

std::optional<ConditionVector> optional_condition(const Json& payload, const char* key,
                                                  const DenoiserParams& params) {
  auto it = payload.find(key);
  if (it == payload.end() || it->is_null()) return std::nullopt;
  return parse_condition(*it, params, key);
}

SamplerConfig parse_sampler(const Json& payload) {
  SamplerConfig s;
  s.mixing_p = opt(payload, "mixing_p", s.mixing_p);
  try {
    s.noise_mode = noise_mode_from_string(opt<std::string>(payload, "noise_mode", "deterministic"));
    s.validate();
  } catch (const std::invalid_argument& e) {
    bad(e.what());
  }
  s.noise_seed = opt<std::uint64_t>(payload, "noise_seed", 0);
  return s;
}

void check_inversion_steps(const VarianceSchedule& full, int steps) {
  try {
    (void)pipeline::inversion_schedule(full, steps);
  } catch (const std::exception& e) {
    bad(e.what());
  }
}

// Step-indexed diagnostics for engine failures.
std::string describe(const std::exception& e) {
  if (auto* nf = dynamic_cast<const NonFiniteError*>(&e)) {
    return std::string(e.what()) + " (step " + std::to_string(nf->step()) + ")";
  }
  if (auto* inv = dynamic_cast<const InversionError*>(&e)) {
    return std::string(e.what()) + " (step " + std::to_string(inv->step()) + ")";
  }
  return e.what();
}

}  // namespace

std::filesystem::path store_dir_from_env() {
  const char* v = std::getenv("GESTINV_STORE");
  return v && *v ? std::filesystem::path(v) : std::filesystem::path();
}

JobService::JobService(ServiceConfig config, std::shared_ptr<const Checkpoint> model)
    : skeleton_(Skeleton::default_skeleton()),
      artifacts_(config.store_dir),
      model_(std::move(model)),
      pool_(config.workers) {}

JobService::~JobService() = default;

std::shared_ptr<const Checkpoint> JobService::active_model() const {
  std::lock_guard lock(model_mu_);
  return model_;
}

std::string JobService::submit(const Json& request) {
  if (!request.is_object()) bad("request must be a JSON object {kind, payload}");
  for (const auto& [key, value] : request.items()) {
    if (key != "kind" && key != "payload") bad("unknown request field '" + key + "'");
  }
  auto kind_it = request.find("kind");
  if (kind_it == request.end() || !kind_it->is_string()) bad("request field 'kind' is required");
  const auto kind = job_kind_from_string(kind_it->get<std::string>());
  if (!kind) bad("unknown job kind '" + kind_it->get<std::string>() + "'");
  const Json payload = request.contains("payload") ? request["payload"] : Json::object();

  Runner runner = prepare(*kind, payload);
  const auto id = jobs_.create(*kind, payload);
  pool_.post([this, id, runner = std::move(runner)] { run(id, runner); });
  return id;
}

void JobService::run(const std::string& id, const Runner& runner) {
  if (!jobs_.start(id)) return;
  try {
    jobs_.finish(id, runner(id));
  } catch (const std::exception& e) {
    jobs_.fail(id, describe(e));
  }
}

std::shared_ptr<const Checkpoint> JobService::model_for(const Json& payload) const {
  if (auto it = payload.find("checkpoint_id"); it != payload.end() && !it->is_null()) {
    if (!it->is_string()) bad("payload field 'checkpoint_id' must be a string");
    auto ckpt = artifacts_.checkpoint(it->get<std::string>());
    if (!ckpt) throw RequestError(404, "unknown checkpoint '" + it->get<std::string>() + "'");
    return ckpt;
  }
  auto m = active_model();
  if (!m) bad("no checkpoint loaded; run a train job or start the service with one");
  return m;
}

MotionSequence JobService::motion_for(const Json& payload, const char* key) const {
  const Json& idj = required(payload, key);
  if (!idj.is_string()) bad(std::string("payload field '") + key + "' must be a string");
  auto m = artifacts_.motion(idj.get<std::string>());
  if (!m) throw RequestError(404, "unknown motion '" + idj.get<std::string>() + "'");
  return *m;
}

JobService::Runner JobService::prepare(JobKind kind, const Json& payload) {
  switch (kind) {
    case JobKind::kTrain: return prepare_train(payload);
    case JobKind::kGenerate: return prepare_generate(payload);
    case JobKind::kInvert: return prepare_invert(payload);
    case JobKind::kRegenStyle: return prepare_regen(payload);
    case JobKind::kEdit: return prepare_edit(payload);
  }
  bad("unsupported job kind");
}

JobService::Runner JobService::prepare_train(const Json& payload) {
  allow_only(payload, {"corpus_seed", "clips", "frames", "epochs", "lr", "init_seed",
                       "shuffle_seed", "total_steps", "activate"});
  pipeline::TrainRequest req;
  req.corpus_seed = opt(payload, "corpus_seed", req.corpus_seed);
  req.clips = opt(payload, "clips", req.clips);
  req.frames = opt(payload, "frames", req.frames);
  req.epochs = opt(payload, "epochs", req.epochs);
  req.lr = opt(payload, "lr", req.lr);
  req.init_seed = opt(payload, "init_seed", req.init_seed);
  req.shuffle_seed = opt(payload, "shuffle_seed", req.shuffle_seed);
  req.total_steps = opt(payload, "total_steps", req.total_steps);
  const bool activate = opt(payload, "activate", true);
  if (req.clips < 1 || req.frames < 2) bad("training needs clips >= 1 and frames >= 2");
  if (req.epochs < 0) bad("epochs must be >= 0");
  if (!(req.lr > 0.0)) bad("lr must be positive");
  if (req.total_steps < 2 || req.total_steps > 10000) bad("total_steps must be in [2, 10000]");
  return [this, req, activate](const std::string&) {
    auto outcome = pipeline::train_model(req);
    auto ckpt = std::make_shared<const Checkpoint>(std::move(outcome.checkpoint));
    const auto id = artifacts_.put_checkpoint(ckpt);
    if (activate) {
      std::lock_guard lock(model_mu_);
      model_ = ckpt;
    }
    return Json{{"checkpoint_id", id},
                {"updates", outcome.loss_history.size()},
                {"final_loss", outcome.loss_history.empty() ? Json() : Json(outcome.loss_history.back())},
                {"active", activate}};
  };
}

JobService::Runner JobService::prepare_generate(const Json& payload) {
  allow_only(payload, {"checkpoint_id", "condition", "seed", "mixing_p", "noise_mode", "noise_seed"});
  auto model = model_for(payload);
  auto condition = parse_condition(required(payload, "condition"), model->params, "condition");
  const auto seed = opt<std::uint64_t>(payload, "seed", 0);
  const auto sampler = parse_sampler(payload);
  return [this, model, condition, seed, sampler](const std::string&) {
    auto motion = pipeline::generate_motion(*model, condition, seed, sampler);
    return Json{{"motion_id", artifacts_.put_motion(std::move(motion))}};
  };
}

JobService::Runner JobService::prepare_invert(const Json& payload) {
  allow_only(payload, {"checkpoint_id", "motion_id", "condition", "steps", "mixing_p"});
  auto model = model_for(payload);
  auto motion = motion_for(payload, "motion_id");
  std::optional<ConditionVector> given = optional_condition(payload, "condition", model->params);
  ConditionVector condition;
  try {
    condition = pipeline::resolve_condition(given, motion);
  } catch (const std::exception& e) {
    bad(e.what());
  }
  const int steps = opt(payload, "steps", 50);
  check_inversion_steps(model->schedule, steps);
  const auto sampler = parse_sampler(payload);
  return [this, model, motion, condition, steps, sampler](const std::string&) {
    auto noise = pipeline::invert_motion(*model, motion, condition, steps, sampler);
    const double max_abs = std::max(ad::max_abs(noise.x_T), ad::max_abs(noise.y_T));
    return Json{{"noise_id", artifacts_.put_noise(std::move(noise))},
                {"steps", steps},
                {"max_abs", max_abs}};
  };
}

JobService::Runner JobService::prepare_regen(const Json& payload) {
  allow_only(payload, {"checkpoint_id", "motion_id", "old_condition", "new_condition",
                       "inv_steps", "mixing_p"});
  auto model = model_for(payload);
  auto motion = motion_for(payload, "motion_id");
  ConditionVector old_c;
  try {
    old_c = pipeline::resolve_condition(optional_condition(payload, "old_condition", model->params),
                                        motion);
  } catch (const RequestError&) {
    throw;
  } catch (const std::exception& e) {
    bad(e.what());
  }
  auto new_c = parse_condition(required(payload, "new_condition"), model->params, "new_condition");
  if (new_c.frames != motion.frames()) bad("new_condition frame count does not match the motion");
  const int steps = opt(payload, "inv_steps", 50);
  check_inversion_steps(model->schedule, steps);
  const auto sampler = parse_sampler(payload);
  return [this, model, motion, old_c, new_c, steps, sampler](const std::string&) {
    auto out = pipeline::regenerate_style(*model, motion, old_c, new_c, steps, sampler);
    return Json{{"motion_id", artifacts_.put_motion(std::move(out))}};
  };
}

JobService::Runner JobService::prepare_edit(const Json& payload) {
  allow_only(payload, {"checkpoint_id", "motion_id", "seed", "condition", "spec", "steps", "lr",
                       "inv_steps", "grad_path", "grad_normalize", "renorm_noise", "tie_arms",
                       "early_stop", "mixing_p"});
  auto model = model_for(payload);
  const bool from_motion = payload.contains("motion_id") && !payload["motion_id"].is_null();
  const bool from_seed = payload.contains("seed") && !payload["seed"].is_null();
  if (from_motion == from_seed) bad("edit needs exactly one of 'motion_id' or 'seed'");

  std::optional<MotionSequence> motion;
  if (from_motion) motion = motion_for(payload, "motion_id");
  auto given = optional_condition(payload, "condition", model->params);
  ConditionVector condition;
  if (motion) {
    try {
      condition = pipeline::resolve_condition(given, *motion);
    } catch (const std::exception& e) {
      bad(e.what());
    }
  } else {
    if (!given) bad("payload field 'condition' is required when editing from a seed");
    condition = *given;
  }
  const std::size_t frames = motion ? motion->frames() : condition.frames;

  pipeline::EditRequest req;
  try {
    req.specs = edit_specs_from_json(required(payload, "spec"), skeleton_, AngleUnit::kRadians);
    for (const auto& s : req.specs) s.validate(skeleton_, frames);
  } catch (const RequestError&) {
    throw;
  } catch (const std::exception& e) {
    bad(std::string("spec: ") + e.what());
  }
  req.optimizer.steps = opt(payload, "steps", req.optimizer.steps);
  req.optimizer.lr = opt(payload, "lr", req.optimizer.lr);
  req.optimizer.grad_normalize = opt(payload, "grad_normalize", req.optimizer.grad_normalize);
  req.optimizer.renorm_noise = opt(payload, "renorm_noise", req.optimizer.renorm_noise);
  req.optimizer.tie_arms = opt(payload, "tie_arms", req.optimizer.tie_arms);
  req.optimizer.early_stop = opt(payload, "early_stop", req.optimizer.early_stop);
  req.inv_steps = opt(payload, "inv_steps", req.inv_steps);
  try {
    req.optimizer.grad_path =
        grad_path_from_string(opt<std::string>(payload, "grad_path", to_string(req.optimizer.grad_path)));
    req.optimizer.validate();
  } catch (const std::invalid_argument& e) {
    bad(e.what());
  }
  check_inversion_steps(model->schedule, req.inv_steps);
  req.sampler = parse_sampler(payload);
  const auto seed = from_seed ? opt<std::uint64_t>(payload, "seed", 0) : 0;

  return [this, model, motion, condition, req, seed](const std::string& id) {
    auto on_step = [this, &id](const TraceRecord& r) {
      jobs_.append_trace(id, Json::parse(trace_record_json(r, true)));
    };
    auto outcome = motion ? pipeline::edit_motion(*model, *motion, condition, req, on_step)
                          : pipeline::edit_from_noise(*model, condition, seed, req, on_step);
    if (outcome.trace.error) throw std::runtime_error(*outcome.trace.error);
    const auto& last = outcome.trace.records.back();
    return Json{{"motion_id", artifacts_.put_motion(std::move(outcome.motion))},
                {"records", outcome.trace.records.size()},
                {"final_loss", last.loss},
                {"final_relative_loss", last.relative_loss},
                {"stopped_early", outcome.trace.stopped_early}};
  };
}

}  // namespace gestinv::service
