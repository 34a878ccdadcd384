#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gestinv/condition.hpp"
#include "gestinv/schedule.hpp"
#include "gestinv/tensor.hpp"

namespace gestinv {

struct DenoiserConfig {
  std::size_t joints = 16;
  std::size_t channels = 3;
  std::size_t feature_dim = 4;
  int speakers = 2;
  std::size_t time_embed_dim = 16;
  std::size_t hidden = 128;
  int max_timestep = 1000;

  std::size_t pose_size() const { return joints * channels; }
  // Per-frame input width: pose, timestep embedding, speech features,
  // speaker one-hot, seed pose.
  std::size_t input_size() const {
    return pose_size() + time_embed_dim + feature_dim + static_cast<std::size_t>(speakers) +
           pose_size();
  }

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

// Weights of the per-frame MLP eps(x_t, t, C) -> x0 estimate:
//   [pose | time embedding | speech | speaker one-hot | seed pose]
//     -> 128 tanh -> 128 tanh -> pose.
struct DenoiserParams {
  DenoiserConfig config;
  std::uint64_t rng_seed = 0;
  ad::Tensor w1, b1, w2, b2, w3, b3;
  // Fixed sinusoidal table, (max_timestep + 1) x time_embed_dim.
  ad::Tensor time_table;

  static DenoiserParams init(const DenoiserConfig& config, std::uint64_t seed);

  // Trainable tensors in a fixed order.
  std::vector<ad::Tensor*> trainable();
  std::vector<const ad::Tensor*> trainable() const;
  std::size_t parameter_count() const;
};

// x0 prediction for x_t of shape [F, J, R] at original timestep t.
// Differentiable with respect to x_t when it is attached to a tape.
ad::Tensor denoise(const DenoiserParams& params, const ad::Tensor& x_t, int t,
                   const ConditionVector& condition);

// Forward diffusion q(x_t | x_0): sqrt(ab_t) x0 + sqrt(1 - ab_t) z, with ab_t
// taken from the schedule at local index t (t = 0 returns x0).
ad::Tensor noised(const ad::Tensor& x0, int t, const VarianceSchedule& schedule,
                  const ad::Tensor& z);

// Standard normal tensor from a seeded engine.
ad::Tensor gaussian(const ad::Shape& shape, std::uint64_t seed);

struct TrainingClip {
  ad::Tensor motion;  // [F, J, R]
  ConditionVector condition;
};

struct TrainConfig {
  int epochs = 150;
  double lr = 0.1;
  std::uint64_t seed = 1;
  std::size_t batch_clips = 8;
  // Draws of (t, z) per clip in each batch.
  std::size_t draws_per_clip = 2;
};

struct TrainResult {
  DenoiserParams params;
  std::vector<double> loss_history;  // batch loss per SGD update
};

// Plain SGD on the x0-prediction MSE over uniformly drawn timesteps.
// Throws NonFiniteError (step = global update index) if the loss diverges.
TrainResult train(const DenoiserParams& params, const std::vector<TrainingClip>& clips,
                  const VarianceSchedule& schedule, const TrainConfig& config);

// Versioned JSON checkpoint. The schedule fingerprint is stored and checked
// on load against `expected` when one is given.
void save_checkpoint(const DenoiserParams& params, const VarianceSchedule& schedule,
                     const std::filesystem::path& path);

struct Checkpoint {
  DenoiserParams params;
  VarianceSchedule schedule;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const VarianceSchedule& expected);

}  // namespace gestinv
