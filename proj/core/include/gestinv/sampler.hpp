#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "gestinv/condition.hpp"
#include "gestinv/denoiser.hpp"
#include "gestinv/schedule.hpp"
#include "gestinv/tensor.hpp"

namespace gestinv {

// x0 predictor eps(x_t, t) at an original-schedule timestep. Binding the
// condition in advance lets tests substitute closed-form stubs.
using Denoiser = std::function<ad::Tensor(const ad::Tensor& x_t, int original_t)>;

Denoiser bind_denoiser(const DenoiserParams& params, ConditionVector condition);

// Coupled pair at local timestep t.
struct CoupledState {
  ad::Tensor x;
  ad::Tensor y;
  int t = 0;
};

enum class NoiseMode { kDeterministic, kRecorded };

std::string to_string(NoiseMode mode);
NoiseMode noise_mode_from_string(const std::string& name);

// Stochastic term of each generation step. Deterministic mode means z = 0.
// Recorded mode stores the z drawn at every local step so inversion can
// subtract exactly the same sigma_t z.
class NoiseLedger {
 public:
  static NoiseLedger deterministic();
  static NoiseLedger recorded(std::uint64_t seed);

  NoiseMode mode() const noexcept { return mode_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::map<int, ad::Tensor>& draws() const noexcept { return draws_; }

  // Generation side: z for local step t. In recorded mode the draw is a
  // pure function of (seed, t), stored on first use.
  const ad::Tensor* draw(int t, const ad::Shape& shape);
  // Inversion side: the stored z for step t, nullptr in deterministic mode.
  // Throws InversionError if a recorded entry is missing.
  const ad::Tensor* lookup(int t) const;

  std::vector<unsigned char> encode() const;
  static NoiseLedger decode(std::vector<unsigned char> bytes);
  void save(const std::filesystem::path& path) const;
  static NoiseLedger load(const std::filesystem::path& path);

  friend bool operator==(const NoiseLedger& a, const NoiseLedger& b);

 private:
  NoiseMode mode_ = NoiseMode::kDeterministic;
  std::uint64_t seed_ = 0;
  std::map<int, ad::Tensor> draws_;
};

struct SamplerConfig {
  double mixing_p = 0.93;
  NoiseMode noise_mode = NoiseMode::kDeterministic;
  std::uint64_t noise_seed = 0;

  // Throws std::invalid_argument unless p is in (0.5, 1].
  void validate() const;
};

// Mixing map (x, y) -> (p x + (1-p) y, (1-p) x + p y) and its inverse.
std::pair<ad::Tensor, ad::Tensor> mix(const ad::Tensor& x, const ad::Tensor& y, double p);
std::pair<ad::Tensor, ad::Tensor> unmix(const ad::Tensor& x, const ad::Tensor& y, double p);

// a_t x_t + b_t eps(x_t, t) + sigma_t z (z == nullptr means zero).
ad::Tensor step_plain(const ad::Tensor& x_t, int t, const Denoiser& eps,
                      const VarianceSchedule& schedule, const ad::Tensor* z = nullptr);

// One coupled step from state.t to state.t - 1, followed by mixing.
// Differentiable through the tape when the state is attached.
CoupledState step_coupled(const CoupledState& state, const Denoiser& eps,
                          const VarianceSchedule& schedule, const SamplerConfig& config,
                          const ad::Tensor* z = nullptr);

// Exact pre-image of step_coupled: from state.t to state.t + 1.
// Throws InversionError("terminal step not invertible") when a_t == 0.
CoupledState step_inverse(const CoupledState& state, const Denoiser& eps,
                          const VarianceSchedule& schedule, const SamplerConfig& config,
                          const ad::Tensor* z = nullptr);

struct Generation {
  ad::Tensor x0;
  ad::Tensor y0;
  NoiseLedger ledger;
};

// Coupled generation from (x_T, y_T = x_T) down to t = 0. Throws
// NonFiniteError naming the step when values blow up.
Generation generate(const ad::Tensor& x_T, const Denoiser& eps, const VarianceSchedule& schedule,
                    const SamplerConfig& config);
// Same, from an arbitrary pair.
Generation generate_pair(const ad::Tensor& x_T, const ad::Tensor& y_T, const Denoiser& eps,
                         const VarianceSchedule& schedule, const SamplerConfig& config);

// Runs step_inverse for t = 1..T. The schedule must have at least two steps
// and a(1) != 0, which in practice means a respacing anchored at the first
// stride (RespaceOrigin::kFirstStride). Throws InversionError or NonFiniteError.
CoupledState invert(const ad::Tensor& x0, const ad::Tensor& y0, const Denoiser& eps,
                    const VarianceSchedule& schedule, const SamplerConfig& config,
                    const NoiseLedger& ledger = NoiseLedger::deterministic());

// Inverts x0 under (C_old, inv_schedule) with y0 = x0, then generates under
// (C_new, full_schedule) from the reconstructed pair. Returns the new x0.
ad::Tensor regenerate_with_style(const ad::Tensor& x0, const ConditionVector& c_old,
                                 const ConditionVector& c_new, const DenoiserParams& params,
                                 const VarianceSchedule& full_schedule,
                                 const VarianceSchedule& inv_schedule,
                                 const SamplerConfig& config);

// Reconstructed noise pair file (x_T, y_T plus the schedule step map).
struct NoisePair {
  ad::Tensor x_T;
  ad::Tensor y_T;
  std::vector<int> step_map;
};
void save_noise_pair(const NoisePair& pair, const std::filesystem::path& path);
NoisePair load_noise_pair(const std::filesystem::path& path);

}  // namespace gestinv
