#include "gestinv/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "gestinv/error.hpp"

namespace gestinv {

namespace {

using ad::Tensor;

void check_pair(const Tensor& x_T, const Tensor& y_T) {
  if (x_T.shape() != y_T.shape()) {
    throw ShapeError("noise arms differ in shape: " + ad::shape_string(x_T.shape()) + " vs " +
                     ad::shape_string(y_T.shape()));
  }
}

NoiseLedger ledger_for(const SamplerConfig& sampler) {
  return sampler.noise_mode == NoiseMode::kRecorded ? NoiseLedger::recorded(sampler.noise_seed)
                                                    : NoiseLedger::deterministic();
}

// Loss value and dL/dx0 at a detached x0.
std::pair<double, Tensor> loss_gradient(const LossFn& loss, const Tensor& x0) {
  ad::Tape tape;
  const Tensor xw = tape.watch(x0);
  const Tensor l = loss(xw);
  if (l.size() != 1) throw ShapeError("loss must be a scalar");
  const double value = l.item();
  if (!std::isfinite(value)) throw NonFiniteError("loss is non-finite", 0, std::abs(value));
  if (!l.attached()) return {value, Tensor::zeros(x0.shape())};
  const auto grads = tape.backward(l);
  return {value, grads[xw]};
}

void check_grad(const Tensor& g, int step) {
  if (!ad::all_finite(g)) {
    throw NonFiniteError("gradient became non-finite at step " + std::to_string(step), step,
                         ad::max_abs(g));
  }
}

Tensor renorm(const Tensor& v) {
  const double norm = ad::l2_norm(v);
  if (norm == 0.0) return v;
  return ad::scale(v, std::sqrt(static_cast<double>(v.size())) / norm);
}

double inf_diff(const Tensor& a, const Tensor& b) { return ad::max_abs(a - b); }

}  // namespace

std::string to_string(GradPath path) {
  return path == GradPath::kFullCache ? "full_cache" : "inversion_recompute";
}

GradPath grad_path_from_string(const std::string& name) {
  if (name == "full_cache") return GradPath::kFullCache;
  if (name == "inversion_recompute") return GradPath::kInversionRecompute;
  throw std::invalid_argument("unknown gradient path '" + name + "'");
}

void OptimizerConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be finite and >= 0");
  if (full_cache_cap < 1) throw std::invalid_argument("full_cache_cap must be >= 1");
}

LossFn make_edit_loss(std::vector<EditSpec> specs, Skeleton skeleton) {
  if (specs.empty()) throw std::invalid_argument("edit needs at least one spec");
  return [specs = std::move(specs), skeleton = std::move(skeleton)](const Tensor& x0) {
    return edit_loss(x0, specs, skeleton);
  };
}

GradResult grad_full_cache(const Tensor& x_T, const Tensor& y_T, const Denoiser& eps,
                           const VarianceSchedule& schedule, const SamplerConfig& sampler,
                           const LossFn& loss, int cap) {
  sampler.validate();
  check_pair(x_T, y_T);
  if (schedule.total_steps() > cap) {
    throw std::invalid_argument("full_cache gradient refuses " +
                                std::to_string(schedule.total_steps()) +
                                " steps (cap " + std::to_string(cap) + ")");
  }
  NoiseLedger ledger = ledger_for(sampler);
  StepMeter meter;
  std::vector<StepMeter::Token> held;

  ad::Tape tape;
  const Tensor xw = tape.watch(x_T);
  const Tensor yw = tape.watch(y_T);
  CoupledState s{xw, yw, schedule.total_steps()};
  while (s.t > 0) {
    held.push_back(meter.hold());
    s = step_coupled(s, eps, schedule, sampler, ledger.draw(s.t, x_T.shape()));
  }
  GradResult r;
  r.x0 = s.x.detach();
  r.y0 = s.y.detach();
  if (!ad::all_finite(r.x0) || !ad::all_finite(r.y0)) {
    throw NonFiniteError("generation produced non-finite values", 0,
                         std::max(ad::max_abs(r.x0), ad::max_abs(r.y0)));
  }
  const Tensor l = loss(s.x);
  if (l.size() != 1) throw ShapeError("loss must be a scalar");
  r.loss = l.item();
  if (!std::isfinite(r.loss)) throw NonFiniteError("loss is non-finite", 0, std::abs(r.loss));
  r.peak_tape_values = tape.saved_values();
  r.retained_steps = meter.peak();
  const auto grads = tape.backward(l);
  r.grad_x = grads[xw];
  r.grad_y = grads[yw];
  check_grad(r.grad_x, schedule.total_steps());
  check_grad(r.grad_y, schedule.total_steps());
  return r;
}

GradResult grad_inversion_recompute(const Tensor& x_T, const Tensor& y_T, const Denoiser& eps,
                                    const VarianceSchedule& schedule,
                                    const SamplerConfig& sampler, const LossFn& loss) {
  sampler.validate();
  check_pair(x_T, y_T);
  NoiseLedger ledger = ledger_for(sampler);
  StepMeter meter;
  const bool keep_boundary = schedule.a(1) == 0.0;
  std::optional<CoupledState> boundary;

  CoupledState s{x_T.detach(), y_T.detach(), schedule.total_steps()};
  while (s.t > 0) {
    const auto token = meter.hold();
    if (s.t == 1 && keep_boundary) boundary = s;
    s = step_coupled(s, eps, schedule, sampler, ledger.draw(s.t, x_T.shape()));
    if (!ad::all_finite(s.x) || !ad::all_finite(s.y)) {
      throw NonFiniteError("generation produced non-finite values at step " +
                               std::to_string(s.t + 1),
                           s.t + 1, std::max(ad::max_abs(s.x), ad::max_abs(s.y)));
    }
  }

  GradResult r;
  r.x0 = s.x;
  r.y0 = s.y;
  auto [value, gx] = loss_gradient(loss, s.x);
  r.loss = value;
  Tensor adj_x = std::move(gx);
  Tensor adj_y = Tensor::zeros(s.y.shape());

  for (int t = 1; t <= schedule.total_steps(); ++t) {
    const auto state_token = meter.hold();
    CoupledState prev;
    if (t == 1 && boundary) {
      prev = *boundary;
    } else {
      prev = step_inverse(s, eps, schedule, sampler, ledger.lookup(t));
      if (!ad::all_finite(prev.x) || !ad::all_finite(prev.y)) {
        throw InversionError("inversion produced non-finite values at step " + std::to_string(t),
                             t);
      }
    }
    {
      const auto tape_token = meter.hold();
      ad::Tape tape;
      const Tensor xw = tape.watch(prev.x);
      const Tensor yw = tape.watch(prev.y);
      const CoupledState out =
          step_coupled({xw, yw, t}, eps, schedule, sampler, ledger.lookup(t));
      const Tensor objective = ad::inner(out.x, adj_x) + ad::inner(out.y, adj_y);
      r.peak_tape_values = std::max(r.peak_tape_values, tape.saved_values());
      const auto grads = tape.backward(objective);
      adj_x = grads[xw];
      adj_y = grads[yw];
    }
    check_grad(adj_x, t);
    check_grad(adj_y, t);
    s = std::move(prev);
  }
  r.grad_x = std::move(adj_x);
  r.grad_y = std::move(adj_y);
  r.retained_steps = meter.peak();
  return r;
}

namespace {

// Equals L / L0 for a positive L0 and stays 1 at s = 0 and below 1 after any
// decrease when L0 is negative (maximize directions).
double relative_to(double value, double initial) {
  return initial == 0.0 ? 1.0 : 1.0 + (value - initial) / std::abs(initial);
}

}  // namespace

OptimizationTrace optimize_noise(const Tensor& x_T, const Tensor& y_T, const Denoiser& eps,
                                 const VarianceSchedule& schedule, const SamplerConfig& sampler,
                                 const OptimizerConfig& config, const LossFn& loss,
                                 const StepCallback& on_step) {
  config.validate();
  sampler.validate();
  check_pair(x_T, y_T);
  if (!ad::all_finite(x_T) || !ad::all_finite(y_T)) {
    throw std::invalid_argument("input noise must be finite");
  }
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
  };
  auto gradient = [&](const Tensor& x, const Tensor& y) {
    return config.grad_path == GradPath::kFullCache
               ? grad_full_cache(x, y, eps, schedule, sampler, loss, config.full_cache_cap)
               : grad_inversion_recompute(x, y, eps, schedule, sampler, loss);
  };

  OptimizationTrace trace;
  trace.x_T = x_T.detach();
  trace.y_T = y_T.detach();
  double loss0 = 0.0;
  auto push = [&](TraceRecord rec) {
    trace.records.push_back(rec);
    if (on_step) on_step(trace.records.back());
  };

  GradResult current;
  try {
    current = gradient(trace.x_T, trace.y_T);
  } catch (const NonFiniteError& e) {
    trace.error = e.what();
    return trace;
  } catch (const InversionError& e) {
    trace.error = e.what();
    return trace;
  }
  trace.x0 = current.x0;
  loss0 = current.loss;
  push({0, loss0, 1.0, 0.0, elapsed_ms(), current.retained_steps,
        inf_diff(trace.x_T, trace.y_T), inf_diff(current.x0, current.y0)});

  int small_gains = 0;
  for (int s = 1; s <= config.steps; ++s) {
    Tensor gx = current.grad_x;
    Tensor gy = current.grad_y;
    const double gnorm = std::max(ad::max_abs(gx), ad::max_abs(gy));
    if (config.grad_normalize && gnorm > 0.0) {
      gx = ad::scale(gx, 1.0 / gnorm);
      gy = ad::scale(gy, 1.0 / gnorm);
    }
    Tensor nx = trace.x_T - ad::scale(gx, config.lr);
    Tensor ny = config.tie_arms ? nx : trace.y_T - ad::scale(gy, config.lr);
    if (config.renorm_noise) {
      nx = renorm(nx);
      ny = config.tie_arms ? nx : renorm(ny);
    }
    try {
      current = gradient(nx, ny);
    } catch (const NonFiniteError& e) {
      trace.error = e.what();
      return trace;
    } catch (const InversionError& e) {
      trace.error = e.what();
      return trace;
    }
    trace.x_T = std::move(nx);
    trace.y_T = std::move(ny);
    trace.x0 = current.x0;
    const double previous = trace.records.back().loss;
    push({s, current.loss, relative_to(current.loss, loss0), gnorm, elapsed_ms(),
          current.retained_steps, inf_diff(trace.x_T, trace.y_T),
          inf_diff(current.x0, current.y0)});
    if (config.early_stop) {
      const double gain = previous == 0.0 ? 0.0 : (previous - current.loss) / std::abs(previous);
      small_gains = gain < 0.01 ? small_gains + 1 : 0;
      if (small_gains >= 2 && s < config.steps) {
        trace.stopped_early = true;
        break;
      }
    }
  }
  return trace;
}

std::string trace_record_json(const TraceRecord& r, bool include_timing) {
  nlohmann::ordered_json j;
  j["s"] = r.s;
  j["loss"] = r.loss;
  j["relative_loss"] = r.relative_loss;
  j["grad_inf_norm"] = r.grad_inf_norm;
  if (include_timing) j["wall_ms"] = r.wall_ms;
  j["retained_steps"] = r.retained_steps;
  j["arm_divergence"] = r.arm_divergence;
  j["output_divergence"] = r.output_divergence;
  return j.dump();
}

std::string trace_to_jsonl(const OptimizationTrace& trace, bool include_timing) {
  std::string out;
  for (const auto& r : trace.records) {
    out += trace_record_json(r, include_timing);
    out += '\n';
  }
  return out;
}

std::string trace_to_csv(const OptimizationTrace& trace, bool include_timing) {
  std::ostringstream os;
  os << "s,loss,relative_loss,grad_inf_norm,";
  if (include_timing) os << "wall_ms,";
  os << "retained_steps,arm_divergence,output_divergence\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : trace.records) {
    os << r.s << ',' << num(r.loss) << ',' << num(r.relative_loss) << ','
       << num(r.grad_inf_norm) << ',';
    if (include_timing) os << num(r.wall_ms) << ',';
    os << r.retained_steps << ',' << num(r.arm_divergence) << ',' << num(r.output_divergence)
       << '\n';
  }
  return os.str();
}

}  // namespace gestinv
