#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gestinv/losses.hpp"
#include "gestinv/sampler.hpp"

namespace gestinv {

enum class GradPath { kFullCache, kInversionRecompute };

std::string to_string(GradPath path);
GradPath grad_path_from_string(const std::string& name);

struct OptimizerConfig {
  int steps = 3;
  double lr = 0.05;
  bool grad_normalize = true;  // unit infinity-norm gradient
  bool renorm_noise = true;    // project onto the sqrt(F*J*R) shell
  GradPath grad_path = GradPath::kInversionRecompute;
  int full_cache_cap = 64;
  // Reset y_T := x_T after every update instead of optimizing both arms.
  bool tie_arms = false;
  // Stop when the relative improvement is < 1% for 2 consecutive steps.
  bool early_stop = false;

  void validate() const;
};

// Scalar loss of the generated x0 ([F, J, R]).
using LossFn = std::function<ad::Tensor(const ad::Tensor& x0)>;

LossFn make_edit_loss(std::vector<EditSpec> specs, Skeleton skeleton);

// Counts diffusion steps whose activations are alive at the same time.
class StepMeter {
 public:
  class Token {
   public:
    explicit Token(StepMeter& m) : meter_(&m) {}
    Token(Token&& o) noexcept : meter_(o.meter_) { o.meter_ = nullptr; }
    Token(const Token&) = delete;
    Token& operator=(const Token&) = delete;
    Token& operator=(Token&&) = delete;
    ~Token() {
      if (meter_) --meter_->live_;
    }

   private:
    StepMeter* meter_;
  };

  Token hold() {
    if (++live_ > peak_) peak_ = live_;
    return Token(*this);
  }
  int live() const noexcept { return live_; }
  int peak() const noexcept { return peak_; }

 private:
  int live_ = 0;
  int peak_ = 0;
};

struct GradResult {
  double loss = 0.0;
  ad::Tensor grad_x;  // dL/dx_T
  ad::Tensor grad_y;  // dL/dy_T
  ad::Tensor x0;
  ad::Tensor y0;
  int retained_steps = 0;         // peak StepMeter count
  std::size_t peak_tape_values = 0;  // largest tape held, in doubles
};

// Records the whole coupled generation on one tape. Refuses schedules
// longer than `cap` steps.
GradResult grad_full_cache(const ad::Tensor& x_T, const ad::Tensor& y_T, const Denoiser& eps,
                           const VarianceSchedule& schedule, const SamplerConfig& sampler,
                           const LossFn& loss, int cap = 64);

// Untaped generation, then a backward sweep t = 1..T that rebuilds each
// state by inversion and tapes only the step being differentiated. When
// a(1) == 0 the state entering the last generation step is kept from the
// forward pass, since that step has no inverse.
GradResult grad_inversion_recompute(const ad::Tensor& x_T, const ad::Tensor& y_T,
                                    const Denoiser& eps, const VarianceSchedule& schedule,
                                    const SamplerConfig& sampler, const LossFn& loss);

struct TraceRecord {
  int s = 0;
  double loss = 0.0;
  double relative_loss = 1.0;  // 1 + (loss - L0) / abs(L0); L0 = loss at s = 0
  double grad_inf_norm = 0.0;  // raw gradient used to reach this iterate
  double wall_ms = 0.0;        // since the optimization started
  int retained_steps = 0;
  double arm_divergence = 0.0;     // |x_T - y_T|_inf
  double output_divergence = 0.0;  // |x_0 - y_0|_inf
};

struct OptimizationTrace {
  std::vector<TraceRecord> records;
  ad::Tensor x_T;
  ad::Tensor y_T;
  ad::Tensor x0;
  bool stopped_early = false;
  std::optional<std::string> error;  // set when a non-finite value aborted the run
};

using StepCallback = std::function<void(const TraceRecord&)>;

// SGD on the input noise pair. Non-finite losses or gradients end the run
// and return the partial trace with `error` set.
OptimizationTrace optimize_noise(const ad::Tensor& x_T, const ad::Tensor& y_T,
                                 const Denoiser& eps, const VarianceSchedule& schedule,
                                 const SamplerConfig& sampler, const OptimizerConfig& config,
                                 const LossFn& loss, const StepCallback& on_step = {});

// One JSON object per record. Wall time is left out unless requested so
// reruns produce identical files.
std::string trace_record_json(const TraceRecord& r, bool include_timing);
std::string trace_to_jsonl(const OptimizationTrace& trace, bool include_timing = false);
std::string trace_to_csv(const OptimizationTrace& trace, bool include_timing = false);

}  // namespace gestinv
