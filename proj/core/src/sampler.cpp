#include "gestinv/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "binary_io.hpp"
#include "gestinv/error.hpp"

namespace gestinv {

namespace {

using ad::Tensor;

constexpr char kLedgerMagic[4] = {'G', 'N', 'L', 'G'};
constexpr char kNoiseMagic[4] = {'G', 'N', 'O', 'I'};
constexpr std::uint16_t kFileVersion = 1;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Tensor add_noise(const Tensor& v, double sigma, const Tensor* z) {
  if (z == nullptr || sigma == 0.0) return v;
  if (z->shape() != v.shape()) {
    throw ShapeError("noise " + ad::shape_string(z->shape()) + " vs state " +
                     ad::shape_string(v.shape()));
  }
  return v + ad::scale(*z, sigma);
}

Tensor sub_noise(const Tensor& v, double sigma, const Tensor* z) {
  if (z == nullptr || sigma == 0.0) return v;
  if (z->shape() != v.shape()) {
    throw ShapeError("noise " + ad::shape_string(z->shape()) + " vs state " +
                     ad::shape_string(v.shape()));
  }
  return v - ad::scale(*z, sigma);
}

void check_state(const CoupledState& s) {
  if (s.x.shape() != s.y.shape()) {
    throw ShapeError("coupled arms differ in shape: " + ad::shape_string(s.x.shape()) + " vs " +
                     ad::shape_string(s.y.shape()));
  }
}

void check_finite(const CoupledState& s, const char* phase) {
  if (ad::all_finite(s.x) && ad::all_finite(s.y)) return;
  const double m = std::max(ad::max_abs(s.x), ad::max_abs(s.y));
  throw NonFiniteError(std::string(phase) + ": non-finite values at step " + std::to_string(s.t) +
                           " (max |value| " + std::to_string(m) + ")",
                       s.t, m);
}

void put_tensor(binary::Writer& w, const Tensor& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.put_doubles(t.data());
}

Tensor get_tensor(binary::Reader& r) {
  const auto rank = r.get<std::uint32_t>("tensor rank");
  if (rank > 8) throw ParseError("implausible tensor rank " + std::to_string(rank), r.offset());
  ad::Shape shape(rank);
  for (auto& d : shape) d = r.get<std::uint32_t>("tensor extent");
  auto values = r.get_doubles(ad::shape_size(shape), "tensor values");
  return Tensor(std::move(shape), std::move(values));
}

void check_magic(binary::Reader& r, const char* magic, const char* what) {
  if (r.get_string(4, "magic") != std::string(magic, 4)) {
    throw ParseError(std::string("not a ") + what + " file: bad magic at byte offset 0", 0);
  }
  const auto at = r.offset();
  const auto version = r.get<std::uint16_t>("version");
  if (version != kFileVersion) {
    throw ParseError("unsupported " + std::string(what) + " version " + std::to_string(version) +
                         " at byte offset " + std::to_string(at),
                     at);
  }
}

}  // namespace

Denoiser bind_denoiser(const DenoiserParams& params, ConditionVector condition) {
  return [&params, c = std::move(condition)](const Tensor& x, int t) {
    return denoise(params, x, t, c);
  };
}

std::string to_string(NoiseMode mode) {
  return mode == NoiseMode::kDeterministic ? "deterministic" : "recorded";
}

NoiseMode noise_mode_from_string(const std::string& name) {
  if (name == "deterministic") return NoiseMode::kDeterministic;
  if (name == "recorded") return NoiseMode::kRecorded;
  throw std::invalid_argument("unknown noise mode '" + name + "'");
}

NoiseLedger NoiseLedger::deterministic() { return NoiseLedger{}; }

NoiseLedger NoiseLedger::recorded(std::uint64_t seed) {
  NoiseLedger l;
  l.mode_ = NoiseMode::kRecorded;
  l.seed_ = seed;
  return l;
}

const Tensor* NoiseLedger::draw(int t, const ad::Shape& shape) {
  if (mode_ == NoiseMode::kDeterministic) return nullptr;
  auto it = draws_.find(t);
  if (it == draws_.end()) {
    it = draws_.emplace(t, gaussian(shape, splitmix(seed_ ^ splitmix(static_cast<std::uint64_t>(t)))))
             .first;
  } else if (it->second.shape() != shape) {
    throw ShapeError("ledger entry for step " + std::to_string(t) + " has shape " +
                     ad::shape_string(it->second.shape()));
  }
  return &it->second;
}

const Tensor* NoiseLedger::lookup(int t) const {
  if (mode_ == NoiseMode::kDeterministic) return nullptr;
  auto it = draws_.find(t);
  if (it == draws_.end()) {
    throw InversionError("noise ledger has no recorded draw for step " + std::to_string(t), t);
  }
  return &it->second;
}

std::vector<unsigned char> NoiseLedger::encode() const {
  binary::Writer w;
  w.put_bytes(kLedgerMagic, 4);
  w.put<std::uint16_t>(kFileVersion);
  w.put<std::uint8_t>(mode_ == NoiseMode::kRecorded ? 1 : 0);
  w.put<std::uint64_t>(seed_);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(draws_.size()));
  for (const auto& [t, z] : draws_) {
    w.put<std::int32_t>(t);
    put_tensor(w, z);
  }
  return w.bytes();
}

NoiseLedger NoiseLedger::decode(std::vector<unsigned char> bytes) {
  binary::Reader r(std::move(bytes));
  check_magic(r, kLedgerMagic, "noise ledger");
  NoiseLedger l;
  const auto mode_at = r.offset();
  const auto mode = r.get<std::uint8_t>("mode");
  if (mode > 1) {
    throw ParseError("bad noise mode " + std::to_string(mode) + " at byte offset " +
                         std::to_string(mode_at),
                     mode_at);
  }
  l.mode_ = mode ? NoiseMode::kRecorded : NoiseMode::kDeterministic;
  l.seed_ = r.get<std::uint64_t>("seed");
  const auto count = r.get<std::uint32_t>("draw count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const int t = r.get<std::int32_t>("draw step");
    l.draws_.emplace(t, get_tensor(r));
  }
  if (!r.at_end()) {
    throw ParseError("trailing bytes at byte offset " + std::to_string(r.offset()), r.offset());
  }
  return l;
}

void NoiseLedger::save(const std::filesystem::path& path) const {
  binary::write_file(path, encode());
}

NoiseLedger NoiseLedger::load(const std::filesystem::path& path) {
  return decode(binary::read_file(path));
}

bool operator==(const NoiseLedger& a, const NoiseLedger& b) {
  if (a.mode_ != b.mode_ || a.seed_ != b.seed_ || a.draws_.size() != b.draws_.size()) return false;
  for (auto ia = a.draws_.begin(), ib = b.draws_.begin(); ia != a.draws_.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
    if (!std::equal(ia->second.data().begin(), ia->second.data().end(),
                    ib->second.data().begin())) {
      return false;
    }
  }
  return true;
}

void SamplerConfig::validate() const {
  if (!(mixing_p > 0.5 && mixing_p <= 1.0)) {
    throw std::invalid_argument("mixing_p must lie in (0.5, 1], got " + std::to_string(mixing_p));
  }
}

std::pair<Tensor, Tensor> mix(const Tensor& x, const Tensor& y, double p) {
  if (p == 1.0) return {x, y};
  return {ad::scale(x, p) + ad::scale(y, 1.0 - p), ad::scale(x, 1.0 - p) + ad::scale(y, p)};
}

std::pair<Tensor, Tensor> unmix(const Tensor& x, const Tensor& y, double p) {
  if (p == 0.5) throw std::invalid_argument("mixing is singular at p = 0.5");
  if (p == 1.0) return {x, y};
  const double det = 2.0 * p - 1.0;
  return {ad::scale(ad::scale(x, p) - ad::scale(y, 1.0 - p), 1.0 / det),
          ad::scale(ad::scale(y, p) - ad::scale(x, 1.0 - p), 1.0 / det)};
}

Tensor step_plain(const Tensor& x_t, int t, const Denoiser& eps, const VarianceSchedule& schedule,
                  const Tensor* z) {
  if (t < 1 || t > schedule.total_steps()) {
    throw std::out_of_range("step " + std::to_string(t) + " outside [1, " +
                            std::to_string(schedule.total_steps()) + "]");
  }
  const Tensor pred = eps(x_t, schedule.original_step(t));
  if (pred.shape() != x_t.shape()) throw ShapeError("denoiser changed the state shape");
  return add_noise(ad::scale(x_t, schedule.a(t)) + ad::scale(pred, schedule.b(t)),
                   schedule.sigma(t), z);
}

CoupledState step_coupled(const CoupledState& state, const Denoiser& eps,
                          const VarianceSchedule& schedule, const SamplerConfig& config,
                          const Tensor* z) {
  check_state(state);
  const int t = state.t;
  if (t < 1 || t > schedule.total_steps()) {
    throw std::out_of_range("coupled step " + std::to_string(t) + " outside [1, " +
                            std::to_string(schedule.total_steps()) + "]");
  }
  const int orig = schedule.original_step(t);
  const double a = schedule.a(t), b = schedule.b(t), sigma = schedule.sigma(t);
  const Tensor x = add_noise(ad::scale(state.x, a) + ad::scale(eps(state.y, orig), b), sigma, z);
  const Tensor y = add_noise(ad::scale(state.y, a) + ad::scale(eps(x, orig), b), sigma, z);
  auto [mx, my] = mix(x, y, config.mixing_p);
  return {std::move(mx), std::move(my), t - 1};
}

CoupledState step_inverse(const CoupledState& state, const Denoiser& eps,
                          const VarianceSchedule& schedule, const SamplerConfig& config,
                          const Tensor* z) {
  check_state(state);
  const int t = state.t + 1;
  if (state.t < 0 || t > schedule.total_steps()) {
    throw std::out_of_range("cannot invert from step " + std::to_string(state.t) +
                            " on a schedule of " + std::to_string(schedule.total_steps()) +
                            " steps");
  }
  const double a = schedule.a(t), b = schedule.b(t), sigma = schedule.sigma(t);
  if (a == 0.0) throw InversionError("terminal step not invertible", t);
  const int orig = schedule.original_step(t);
  auto [x1, y1] = unmix(state.x, state.y, config.mixing_p);
  const Tensor y = ad::scale(sub_noise(y1, sigma, z) - ad::scale(eps(x1, orig), b), 1.0 / a);
  const Tensor x = ad::scale(sub_noise(x1, sigma, z) - ad::scale(eps(y, orig), b), 1.0 / a);
  return {x, y, t};
}

Generation generate_pair(const Tensor& x_T, const Tensor& y_T, const Denoiser& eps,
                         const VarianceSchedule& schedule, const SamplerConfig& config) {
  config.validate();
  CoupledState s{x_T.detach(), y_T.detach(), schedule.total_steps()};
  check_state(s);
  check_finite(s, "generate");
  NoiseLedger ledger = config.noise_mode == NoiseMode::kRecorded
                           ? NoiseLedger::recorded(config.noise_seed)
                           : NoiseLedger::deterministic();
  while (s.t > 0) {
    const Tensor* z = ledger.draw(s.t, s.x.shape());
    s = step_coupled(s, eps, schedule, config, z);
    check_finite(s, "generate");
  }
  return {std::move(s.x), std::move(s.y), std::move(ledger)};
}

Generation generate(const Tensor& x_T, const Denoiser& eps, const VarianceSchedule& schedule,
                    const SamplerConfig& config) {
  return generate_pair(x_T, x_T, eps, schedule, config);
}

CoupledState invert(const Tensor& x0, const Tensor& y0, const Denoiser& eps,
                    const VarianceSchedule& schedule, const SamplerConfig& config,
                    const NoiseLedger& ledger) {
  config.validate();
  if (schedule.total_steps() < 2) {
    // A one-step chain is just the terminal step; refuse it even when a(1)
    // happens to be nonzero so callers get one consistent rule.
    throw InversionError("terminal step not invertible", 1);
  }
  CoupledState s{x0.detach(), y0.detach(), 0};
  check_state(s);
  check_finite(s, "invert");
  while (s.t < schedule.total_steps()) {
    s = step_inverse(s, eps, schedule, config, ledger.lookup(s.t + 1));
    check_finite(s, "invert");
  }
  return s;
}

Tensor regenerate_with_style(const Tensor& x0, const ConditionVector& c_old,
                             const ConditionVector& c_new, const DenoiserParams& params,
                             const VarianceSchedule& full_schedule,
                             const VarianceSchedule& inv_schedule, const SamplerConfig& config) {
  if (inv_schedule.fingerprint() != full_schedule.fingerprint() ||
      inv_schedule.original_step(inv_schedule.total_steps()) !=
          full_schedule.original_step(full_schedule.total_steps())) {
    throw std::invalid_argument(
        "inversion schedule must be a respacing of the generation schedule ending at the same "
        "timestep");
  }
  SamplerConfig inv_config = config;
  inv_config.noise_mode = NoiseMode::kDeterministic;
  const auto noise = invert(x0, x0, bind_denoiser(params, c_old), inv_schedule, inv_config);
  return generate_pair(noise.x, noise.y, bind_denoiser(params, c_new), full_schedule, config).x0;
}

void save_noise_pair(const NoisePair& pair, const std::filesystem::path& path) {
  if (pair.x_T.shape() != pair.y_T.shape()) throw ShapeError("noise pair arms differ in shape");
  binary::Writer w;
  w.put_bytes(kNoiseMagic, 4);
  w.put<std::uint16_t>(kFileVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(pair.step_map.size()));
  for (int s : pair.step_map) w.put<std::int32_t>(s);
  put_tensor(w, pair.x_T);
  put_tensor(w, pair.y_T);
  binary::write_file(path, w.bytes());
}

NoisePair load_noise_pair(const std::filesystem::path& path) {
  binary::Reader r(binary::read_file(path));
  check_magic(r, kNoiseMagic, "noise pair");
  NoisePair p;
  const auto n = r.get<std::uint32_t>("step map length");
  r.require(static_cast<std::size_t>(n) * 4, "step map");
  p.step_map.resize(n);
  for (auto& s : p.step_map) s = r.get<std::int32_t>("step map entry");
  p.x_T = get_tensor(r);
  p.y_T = get_tensor(r);
  if (p.x_T.shape() != p.y_T.shape()) throw ParseError("noise pair arms differ in shape", r.offset());
  if (!r.at_end()) {
    throw ParseError("trailing bytes at byte offset " + std::to_string(r.offset()), r.offset());
  }
  return p;
}

}  // namespace gestinv
