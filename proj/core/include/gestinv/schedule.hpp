#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gestinv {

enum class BetaSpacing { kLinear, kCosine };

// Where a respaced schedule anchors its clean end (local index 0).
enum class RespaceOrigin {
  // Local index 0 maps to original timestep 0, so alpha_bar(0) = 1. The final
  // generation step then returns the denoiser prediction and has a(1) = 0.
  kClean,
  // n + 1 even strides ending at T with the clean point dropped: local index
  // k maps to round((k + 1) T / (n + 1)). alpha_bar(0) < 1, so every step has
  // a(t) != 0 and is invertible. The first stride also keeps a(1) well away
  // from zero, which bounds error growth when inverting.
  kFirstStride,
};

// Per-step coefficients of the x0-parameterised DDPM sampler
//   x_{t-1} = a_t x_t + b_t eps(x_t, t) + sigma_t z.
//
// Local steps run t = 1..total_steps(). Arrays indexed by t use index t-1,
// except alpha_bar() which is stored with alpha_bar(0) at index 0.
// Immutable after construction.
class VarianceSchedule {
 public:
  // Fresh schedule with identity step map.
  static VarianceSchedule build(int total_steps, double beta_start, double beta_end,
                                BetaSpacing spacing);

  // The standard 1000-step linear schedule (1e-4 -> 0.02).
  static VarianceSchedule default_schedule();

  int total_steps() const noexcept { return static_cast<int>(betas_.size()); }

  double beta(int t) const { return betas_.at(index(t)); }
  double alpha(int t) const { return alphas_.at(index(t)); }
  double alpha_bar(int t) const { return alpha_bars_.at(static_cast<std::size_t>(t)); }
  double sigma(int t) const { return sigmas_.at(index(t)); }
  double a(int t) const { return a_coeffs_.at(index(t)); }
  double b(int t) const { return b_coeffs_.at(index(t)); }

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }
  // 1 - alpha_bar(t), accumulated without cancellation.
  double one_minus_alpha_bar(int t) const {
    return one_minus_alpha_bars_.at(static_cast<std::size_t>(t));
  }

  // Original-schedule timestep for local index t in [0, total_steps()].
  int original_step(int t) const { return step_map_.at(static_cast<std::size_t>(t)); }
  const std::vector<int>& step_map() const noexcept { return step_map_; }

  // Parameters of the schedule this one was derived from.
  int base_steps() const noexcept { return base_steps_; }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }
  BetaSpacing spacing() const noexcept { return spacing_; }
  bool is_respaced() const;

  // Stable hash of the base schedule parameters (not of the step map).
  std::string fingerprint() const;

 private:
  VarianceSchedule() = default;
  static std::size_t index(int t);
  // Fills every derived array from betas_. `one_minus_origin` is 1 - alpha_bar(0)
  // carried separately so that 1 - alpha_bar(t) is accumulated without
  // cancellation: (1 - ab_t) = (1 - ab_{t-1}) + ab_{t-1} beta_t.
  void derive_from_betas(double alpha_bar_origin, double one_minus_origin);

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> one_minus_alpha_bars_;
  std::vector<double> sigmas_;
  std::vector<double> a_coeffs_;
  std::vector<double> b_coeffs_;
  std::vector<int> step_map_;

  int base_steps_ = 0;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  BetaSpacing spacing_ = BetaSpacing::kLinear;

  friend VarianceSchedule respace_at(const VarianceSchedule&, std::vector<int>);
};

// Sub-schedule over the given original timesteps. `timesteps` lists local
// index 0..n and must be strictly increasing. Effective betas are chosen so
// the respaced alpha_bar equals the original at every selected timestep.
VarianceSchedule respace_at(const VarianceSchedule& schedule, std::vector<int> timesteps);

// Even striding over the original timesteps that always ends at T.
VarianceSchedule respace(const VarianceSchedule& schedule, int n_steps,
                         RespaceOrigin origin = RespaceOrigin::kClean);

std::string to_string(BetaSpacing spacing);
BetaSpacing beta_spacing_from_string(const std::string& name);

}  // namespace gestinv
