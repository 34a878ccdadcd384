#include "gestinv/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace gestinv {

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<double> cosine_betas(int total_steps, double beta_start, double beta_end) {
  constexpr double kOffset = 0.008;
  auto f = [&](double t) {
    const double x = (t / total_steps + kOffset) / (1.0 + kOffset) * std::numbers::pi / 2.0;
    return std::cos(x) * std::cos(x);
  };
  std::vector<double> betas(total_steps);
  for (int t = 1; t <= total_steps; ++t) {
    const double beta = 1.0 - f(t) / f(t - 1);
    betas[t - 1] = std::clamp(beta, beta_start, beta_end);
  }
  return betas;
}

}  // namespace

VarianceSchedule VarianceSchedule::build(int total_steps, double beta_start, double beta_end,
                                         BetaSpacing spacing) {
  if (total_steps < 1) throw std::invalid_argument("schedule needs total_steps >= 1");
  if (!(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0)) {
    throw std::invalid_argument("schedule betas must lie in (0, 1)");
  }
  if (beta_start > beta_end) throw std::invalid_argument("schedule needs beta_start <= beta_end");

  VarianceSchedule s;
  s.base_steps_ = total_steps;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.spacing_ = spacing;
  if (spacing == BetaSpacing::kLinear) {
    s.betas_.resize(total_steps);
    for (int i = 0; i < total_steps; ++i) {
      const double frac = total_steps == 1 ? 0.0 : static_cast<double>(i) / (total_steps - 1);
      s.betas_[i] = beta_start + frac * (beta_end - beta_start);
    }
  } else {
    s.betas_ = cosine_betas(total_steps, beta_start, beta_end);
  }
  s.step_map_.resize(total_steps + 1);
  for (int t = 0; t <= total_steps; ++t) s.step_map_[t] = t;
  s.derive_from_betas(1.0, 0.0);
  return s;
}

VarianceSchedule VarianceSchedule::default_schedule() {
  return build(1000, 1e-4, 0.02, BetaSpacing::kLinear);
}

std::size_t VarianceSchedule::index(int t) {
  if (t < 1) throw std::out_of_range("timestep must be >= 1, got " + std::to_string(t));
  return static_cast<std::size_t>(t - 1);
}

void VarianceSchedule::derive_from_betas(double alpha_bar_origin, double one_minus_origin) {
  const auto n = betas_.size();
  alphas_.resize(n);
  alpha_bars_.assign(n + 1, 0.0);
  one_minus_alpha_bars_.assign(n + 1, 0.0);
  sigmas_.resize(n);
  a_coeffs_.resize(n);
  b_coeffs_.resize(n);

  alpha_bars_[0] = alpha_bar_origin;
  one_minus_alpha_bars_[0] = one_minus_origin;
  for (std::size_t i = 0; i < n; ++i) {
    const double beta = betas_[i];
    if (!(beta > 0.0 && beta < 1.0)) {
      throw std::invalid_argument("schedule beta at step " + std::to_string(i + 1) +
                                  " outside (0, 1)");
    }
    alphas_[i] = 1.0 - beta;
    alpha_bars_[i + 1] = alpha_bars_[i] * alphas_[i];
    one_minus_alpha_bars_[i + 1] = one_minus_alpha_bars_[i] + alpha_bars_[i] * beta;

    const double prev_om = one_minus_alpha_bars_[i];
    const double om = one_minus_alpha_bars_[i + 1];
    sigmas_[i] = std::sqrt(prev_om / om * beta);
    a_coeffs_[i] = prev_om * std::sqrt(alphas_[i]) / om;
    b_coeffs_[i] = beta * std::sqrt(alpha_bars_[i]) / om;
  }
}

bool VarianceSchedule::is_respaced() const {
  for (std::size_t t = 0; t < step_map_.size(); ++t) {
    if (step_map_[t] != static_cast<int>(t)) return true;
  }
  return static_cast<int>(betas_.size()) != base_steps_;
}

std::string VarianceSchedule::fingerprint() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s:%d:%.17g:%.17g", to_string(spacing_).c_str(), base_steps_,
                beta_start_, beta_end_);
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(fnv1a(buf)));
  return out;
}

VarianceSchedule respace_at(const VarianceSchedule& schedule, std::vector<int> timesteps) {
  if (timesteps.size() < 2) throw std::invalid_argument("respace needs at least one step");
  for (std::size_t k = 0; k < timesteps.size(); ++k) {
    if (timesteps[k] < 0 || timesteps[k] > schedule.total_steps()) {
      throw std::invalid_argument("respace timestep " + std::to_string(timesteps[k]) +
                                  " out of range");
    }
    if (k > 0 && timesteps[k] <= timesteps[k - 1]) {
      throw std::invalid_argument("respace timesteps must be strictly increasing");
    }
  }

  VarianceSchedule s;
  s.base_steps_ = schedule.base_steps_;
  s.beta_start_ = schedule.beta_start_;
  s.beta_end_ = schedule.beta_end_;
  s.spacing_ = schedule.spacing_;

  const auto n = timesteps.size() - 1;
  s.betas_.resize(n);
  for (std::size_t k = 1; k <= n; ++k) {
    const int prev = timesteps[k - 1];
    const int cur = timesteps[k];
    // 1 - ab_cur / ab_prev, written as a difference of the accurately
    // accumulated complements.
    const double drop =
        schedule.one_minus_alpha_bar(cur) - schedule.one_minus_alpha_bar(prev);
    s.betas_[k - 1] = drop / schedule.alpha_bar(prev);
  }
  s.step_map_.resize(n + 1);
  for (std::size_t k = 0; k <= n; ++k) s.step_map_[k] = schedule.original_step(timesteps[k]);
  s.derive_from_betas(schedule.alpha_bar(timesteps[0]),
                      schedule.one_minus_alpha_bar(timesteps[0]));
  return s;
}

VarianceSchedule respace(const VarianceSchedule& schedule, int n_steps, RespaceOrigin origin) {
  const int total = schedule.total_steps();
  if (n_steps < 1) throw std::invalid_argument("respace needs n_steps >= 1");
  if (n_steps > total) {
    throw std::invalid_argument("respace: n_steps " + std::to_string(n_steps) +
                                " exceeds total_steps " + std::to_string(total));
  }
  std::vector<int> timesteps(n_steps + 1);
  if (origin == RespaceOrigin::kClean) {
    if (n_steps == total) return schedule;
    for (int k = 0; k <= n_steps; ++k) {
      timesteps[k] = static_cast<int>((static_cast<long long>(k) * total + n_steps / 2) / n_steps);
    }
  } else {
    if (n_steps > total - 1) {
      throw std::invalid_argument("respace from the first stride needs n_steps <= " +
                                  std::to_string(total - 1));
    }
    const long long points = n_steps + 1;
    for (int k = 0; k <= n_steps; ++k) {
      timesteps[k] = static_cast<int>(((k + 1) * static_cast<long long>(total) + points / 2) / points);
    }
  }
  return respace_at(schedule, std::move(timesteps));
}

std::string to_string(BetaSpacing spacing) {
  return spacing == BetaSpacing::kLinear ? "linear" : "cosine";
}

BetaSpacing beta_spacing_from_string(const std::string& name) {
  if (name == "linear") return BetaSpacing::kLinear;
  if (name == "cosine") return BetaSpacing::kCosine;
  throw std::invalid_argument("unknown beta spacing '" + name + "'");
}

}  // namespace gestinv
