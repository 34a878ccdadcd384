#pragma once

// End-to-end operations shared by the command-line tool and the job service.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "gestinv/corpus.hpp"
#include "gestinv/denoiser.hpp"
#include "gestinv/motion.hpp"
#include "gestinv/optimizer.hpp"
#include "gestinv/sampler.hpp"

namespace gestinv::pipeline {

struct TrainRequest {
  std::uint64_t corpus_seed = 7;
  std::size_t clips = 64;
  std::size_t frames = 60;
  int epochs = 150;
  double lr = 0.1;
  std::uint64_t init_seed = 1;
  std::uint64_t shuffle_seed = 1;
  // Length of the freshly built linear 1e-4 -> 0.02 schedule.
  int total_steps = 1000;
};

struct TrainOutcome {
  Checkpoint checkpoint;
  std::vector<double> loss_history;
};

TrainOutcome train_model(const TrainRequest& request);

// Standard normal x_T for a clip of `frames` frames.
ad::Tensor initial_noise(const DenoiserParams& params, std::size_t frames, std::uint64_t seed);

// Coupled generation over the checkpoint's schedule; returns the x arm.
MotionSequence generate_motion(const Checkpoint& model, const ConditionVector& condition,
                               std::uint64_t seed, const SamplerConfig& sampler,
                               NoiseLedger* ledger_out = nullptr);

// The respaced schedule used for inversion and noise editing.
VarianceSchedule inversion_schedule(const VarianceSchedule& full, int steps);

// Reconstructs the noise pair of an existing motion (y0 := x0).
NoisePair invert_motion(const Checkpoint& model, const MotionSequence& motion,
                        const ConditionVector& condition, int steps,
                        const SamplerConfig& sampler);

MotionSequence regenerate_style(const Checkpoint& model, const MotionSequence& motion,
                                const ConditionVector& old_condition,
                                const ConditionVector& new_condition, int inv_steps,
                                const SamplerConfig& sampler);

struct EditRequest {
  std::vector<EditSpec> specs;
  OptimizerConfig optimizer;
  SamplerConfig sampler;
  int inv_steps = 50;
};

struct EditOutcome {
  MotionSequence motion;
  OptimizationTrace trace;
};

// Inverts `motion` on the respaced schedule, then optimizes the noise pair
// against the specs on that same schedule.
EditOutcome edit_motion(const Checkpoint& model, const MotionSequence& motion,
                        const ConditionVector& condition, const EditRequest& request,
                        const StepCallback& on_step = {});

// Same loop starting from seeded Gaussian noise instead of an inverted motion.
EditOutcome edit_from_noise(const Checkpoint& model, const ConditionVector& condition,
                            std::uint64_t seed, const EditRequest& request,
                            const StepCallback& on_step = {});

// `given` if present, otherwise the condition stored with the motion.
ConditionVector resolve_condition(const std::optional<ConditionVector>& given,
                                  const MotionSequence& motion);

ConditionVector load_condition(const std::filesystem::path& path);
void save_condition(const ConditionVector& condition, const std::filesystem::path& path);

}  // namespace gestinv::pipeline
