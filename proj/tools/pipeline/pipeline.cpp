#include "pipeline.hpp"

#include <fstream>
#include <stdexcept>

#include "gestinv/error.hpp"
#include "gestinv/serialization.hpp"

namespace gestinv::pipeline {

namespace {

void check_motion(const DenoiserParams& params, const MotionSequence& motion) {
  const auto& c = params.config;
  if (motion.joints() != c.joints || motion.channels() != c.channels) {
    throw ShapeError("motion has " + std::to_string(motion.joints()) + " joints, the model expects " +
                     std::to_string(c.joints));
  }
}

MotionSequence to_motion(const ad::Tensor& x0, const MotionSequence& like,
                         const ConditionVector& condition) {
  return MotionSequence::from_tensor(like.skeleton(), x0, like.frame_rate(), condition);
}

EditOutcome run_edit(const Checkpoint& model, const ad::Tensor& x_T, const ad::Tensor& y_T,
                     const VarianceSchedule& schedule, const ConditionVector& condition,
                     const Skeleton& skeleton, double frame_rate, const EditRequest& request,
                     const StepCallback& on_step) {
  const auto frames = x_T.dim(0);
  for (const auto& spec : request.specs) spec.validate(skeleton, frames);
  const auto eps = bind_denoiser(model.params, condition);
  auto trace = optimize_noise(x_T, y_T, eps, schedule, request.sampler, request.optimizer,
                              make_edit_loss(request.specs, skeleton), on_step);
  auto motion = MotionSequence::from_tensor(skeleton, trace.x0, frame_rate, condition);
  return {std::move(motion), std::move(trace)};
}

}  // namespace

TrainOutcome train_model(const TrainRequest& request) {
  if (request.clips == 0 || request.frames < 2) {
    throw std::invalid_argument("training needs at least one clip of two or more frames");
  }
  const auto corpus = synth_corpus(request.corpus_seed, request.clips, request.frames);
  const auto schedule =
      VarianceSchedule::build(request.total_steps, 1e-4, 0.02, BetaSpacing::kLinear);
  DenoiserConfig config;
  config.max_timestep = request.total_steps;
  TrainConfig tc;
  tc.epochs = request.epochs;
  tc.lr = request.lr;
  tc.seed = request.shuffle_seed;
  auto result = train(DenoiserParams::init(config, request.init_seed), corpus.training_clips(),
                      schedule, tc);
  return {{std::move(result.params), schedule}, std::move(result.loss_history)};
}

ad::Tensor initial_noise(const DenoiserParams& params, std::size_t frames, std::uint64_t seed) {
  return gaussian({frames, params.config.joints, params.config.channels}, seed);
}

MotionSequence generate_motion(const Checkpoint& model, const ConditionVector& condition,
                               std::uint64_t seed, const SamplerConfig& sampler,
                               NoiseLedger* ledger_out) {
  const auto x_T = initial_noise(model.params, condition.frames, seed);
  auto gen = generate(x_T, bind_denoiser(model.params, condition), model.schedule, sampler);
  if (ledger_out) *ledger_out = std::move(gen.ledger);
  return MotionSequence::from_tensor(Skeleton::default_skeleton(), gen.x0, 30.0, condition);
}

VarianceSchedule inversion_schedule(const VarianceSchedule& full, int steps) {
  if (steps < 2) {
    throw InversionError("terminal step not invertible: inversion needs at least 2 steps", 1);
  }
  if (steps >= full.total_steps()) {
    throw std::invalid_argument("inversion steps must be below the model's " +
                                std::to_string(full.total_steps()) + " steps");
  }
  return respace(full, steps, RespaceOrigin::kFirstStride);
}

NoisePair invert_motion(const Checkpoint& model, const MotionSequence& motion,
                        const ConditionVector& condition, int steps,
                        const SamplerConfig& sampler) {
  check_motion(model.params, motion);
  const auto schedule = inversion_schedule(model.schedule, steps);
  const auto x0 = motion.to_tensor();
  const auto state = invert(x0, x0, bind_denoiser(model.params, condition), schedule, sampler);
  return {state.x, state.y, schedule.step_map()};
}

MotionSequence regenerate_style(const Checkpoint& model, const MotionSequence& motion,
                                const ConditionVector& old_condition,
                                const ConditionVector& new_condition, int inv_steps,
                                const SamplerConfig& sampler) {
  check_motion(model.params, motion);
  const auto inv = inversion_schedule(model.schedule, inv_steps);
  const auto x0 = regenerate_with_style(motion.to_tensor(), old_condition, new_condition,
                                        model.params, model.schedule, inv, sampler);
  return to_motion(x0, motion, new_condition);
}

EditOutcome edit_motion(const Checkpoint& model, const MotionSequence& motion,
                        const ConditionVector& condition, const EditRequest& request,
                        const StepCallback& on_step) {
  check_motion(model.params, motion);
  const auto schedule = inversion_schedule(model.schedule, request.inv_steps);
  const auto x0 = motion.to_tensor();
  for (const auto& spec : request.specs) spec.validate(motion.skeleton(), motion.frames());
  const auto noise =
      invert(x0, x0, bind_denoiser(model.params, condition), schedule, request.sampler);
  return run_edit(model, noise.x, noise.y, schedule, condition, motion.skeleton(),
                  motion.frame_rate(), request, on_step);
}

EditOutcome edit_from_noise(const Checkpoint& model, const ConditionVector& condition,
                            std::uint64_t seed, const EditRequest& request,
                            const StepCallback& on_step) {
  const auto schedule = inversion_schedule(model.schedule, request.inv_steps);
  const auto x_T = initial_noise(model.params, condition.frames, seed);
  return run_edit(model, x_T, x_T, schedule, condition, Skeleton::default_skeleton(), 30.0,
                  request, on_step);
}

ConditionVector resolve_condition(const std::optional<ConditionVector>& given,
                                  const MotionSequence& motion) {
  if (given) return *given;
  if (motion.condition()) return *motion.condition();
  throw std::invalid_argument("no condition given and the motion does not carry one");
}

ConditionVector load_condition(const std::filesystem::path& path) {
  return condition_from_json(read_json_file(path.string()));
}

void save_condition(const ConditionVector& condition, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << condition_to_json(condition).dump(2) << '\n';
}

}  // namespace gestinv::pipeline
