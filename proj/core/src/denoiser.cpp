#include "gestinv/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "gestinv/error.hpp"
#include "gestinv/serialization.hpp"

namespace gestinv {

namespace {

using ad::Tensor;

Tensor xavier(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> w(in * out);
  for (auto& v : w) v = dist(rng);
  return Tensor({in, out}, std::move(w));
}

Tensor make_time_table(int max_timestep, std::size_t dim) {
  std::vector<double> table((static_cast<std::size_t>(max_timestep) + 1) * dim);
  for (int t = 0; t <= max_timestep; ++t) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      table[t * dim + 2 * i] = std::sin(t * freq);
      table[t * dim + 2 * i + 1] = std::cos(t * freq);
    }
  }
  return Tensor({static_cast<std::size_t>(max_timestep) + 1, dim}, std::move(table));
}

// Condition/timestep part of the per-frame input rows, appended to `rows`.
void append_context(const DenoiserParams& p, int t, const ConditionVector& c,
                    std::vector<double>& rows) {
  const auto& cfg = p.config;
  const auto* embed = p.time_table.data().data() + static_cast<std::size_t>(t) * cfg.time_embed_dim;
  for (std::size_t f = 0; f < c.frames; ++f) {
    rows.insert(rows.end(), embed, embed + cfg.time_embed_dim);
    rows.insert(rows.end(), c.speech_features.begin() + static_cast<std::ptrdiff_t>(f * c.feature_dim),
                c.speech_features.begin() + static_cast<std::ptrdiff_t>((f + 1) * c.feature_dim));
    for (int s = 0; s < cfg.speakers; ++s) rows.push_back(s == c.speaker_id ? 1.0 : 0.0);
    rows.insert(rows.end(), c.seed_pose.begin(), c.seed_pose.end());
  }
}

std::size_t context_width(const DenoiserConfig& cfg) {
  return cfg.input_size() - cfg.pose_size();
}

void check_timestep(const DenoiserParams& p, int t) {
  if (t < 1 || t > p.config.max_timestep) {
    throw std::out_of_range("denoiser timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(p.config.max_timestep) + "]");
  }
}

// MLP over input rows [N, input_size] -> [N, pose_size], using the given
// (possibly tape-attached) weights.
Tensor mlp(const Tensor& input, const Tensor& w1, const Tensor& b1, const Tensor& w2,
           const Tensor& b2, const Tensor& w3, const Tensor& b3) {
  const auto n = input.dim(0);
  Tensor h = ad::tanh(ad::matmul(input, w1) + ad::broadcast(b1, n));
  h = ad::tanh(ad::matmul(h, w2) + ad::broadcast(b2, n));
  return ad::matmul(h, w3) + ad::broadcast(b3, n);
}

}  // namespace

DenoiserParams DenoiserParams::init(const DenoiserConfig& config, std::uint64_t seed) {
  if (config.joints == 0 || config.channels == 0 || config.hidden == 0 ||
      config.time_embed_dim % 2 != 0 || config.speakers < 1 || config.max_timestep < 1) {
    throw std::invalid_argument("inconsistent denoiser configuration");
  }
  DenoiserParams p;
  p.config = config;
  p.rng_seed = seed;
  std::mt19937_64 rng(seed);
  p.w1 = xavier(config.input_size(), config.hidden, rng);
  p.b1 = Tensor::zeros({config.hidden});
  p.w2 = xavier(config.hidden, config.hidden, rng);
  p.b2 = Tensor::zeros({config.hidden});
  p.w3 = xavier(config.hidden, config.pose_size(), rng);
  p.b3 = Tensor::zeros({config.pose_size()});
  p.time_table = make_time_table(config.max_timestep, config.time_embed_dim);
  return p;
}

std::vector<ad::Tensor*> DenoiserParams::trainable() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

std::vector<const ad::Tensor*> DenoiserParams::trainable() const {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

std::size_t DenoiserParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : trainable()) n += t->size();
  return n;
}

Tensor denoise(const DenoiserParams& params, const Tensor& x_t, int t,
               const ConditionVector& condition) {
  const auto& cfg = params.config;
  if (x_t.rank() != 3 || x_t.dim(1) != cfg.joints || x_t.dim(2) != cfg.channels) {
    throw ShapeError("denoiser expects [F, " + std::to_string(cfg.joints) + ", " +
                     std::to_string(cfg.channels) + "], got " + ad::shape_string(x_t.shape()));
  }
  check_timestep(params, t);
  const auto frames = x_t.dim(0);
  condition.validate(frames, cfg.pose_size(), cfg.speakers);
  if (condition.feature_dim != cfg.feature_dim) {
    throw ShapeError("condition feature dim " + std::to_string(condition.feature_dim) +
                     " does not match denoiser " + std::to_string(cfg.feature_dim));
  }

  std::vector<double> ctx;
  ctx.reserve(frames * context_width(cfg));
  append_context(params, t, condition, ctx);
  const Tensor parts[2] = {ad::reshape(x_t, {frames, cfg.pose_size()}),
                           Tensor({frames, context_width(cfg)}, std::move(ctx))};
  const Tensor input = ad::concat(parts, 1);
  const Tensor out =
      mlp(input, params.w1, params.b1, params.w2, params.b2, params.w3, params.b3);
  return ad::reshape(out, x_t.shape());
}

Tensor noised(const Tensor& x0, int t, const VarianceSchedule& schedule, const Tensor& z) {
  if (x0.shape() != z.shape()) {
    throw ShapeError("noised: x0 " + ad::shape_string(x0.shape()) + " vs z " +
                     ad::shape_string(z.shape()));
  }
  if (t == 0 && schedule.alpha_bar(0) == 1.0) return x0;
  const double signal = std::sqrt(schedule.alpha_bar(t));
  const double noise = std::sqrt(schedule.one_minus_alpha_bar(t));
  return ad::scale(x0, signal) + ad::scale(z, noise);
}

Tensor gaussian(const ad::Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(ad::shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v));
}

TrainResult train(const DenoiserParams& params, const std::vector<TrainingClip>& clips,
                  const VarianceSchedule& schedule, const TrainConfig& config) {
  if (clips.empty()) throw std::invalid_argument("training needs a nonempty corpus");
  if (config.batch_clips == 0 || config.draws_per_clip == 0) {
    throw std::invalid_argument("training batch sizes must be positive");
  }
  const auto& cfg = params.config;
  if (schedule.original_step(schedule.total_steps()) > cfg.max_timestep) {
    throw std::invalid_argument("schedule exceeds the denoiser's timestep table");
  }
  for (const auto& c : clips) {
    if (c.motion.rank() != 3 || c.motion.dim(1) != cfg.joints || c.motion.dim(2) != cfg.channels) {
      throw ShapeError("training clip shape " + ad::shape_string(c.motion.shape()) +
                       " does not match the denoiser");
    }
    c.condition.validate(c.motion.dim(0), cfg.pose_size(), cfg.speakers);
  }

  TrainResult result{params, {}};
  auto& p = result.params;
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> pick_t(1, schedule.total_steps());
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::size_t> order(clips.size());
  std::size_t update = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < order.size(); start += config.batch_clips) {
      const auto end = std::min(order.size(), start + config.batch_clips);

      // Stack every (clip, draw) as independent frame rows.
      std::vector<double> noisy_rows, ctx_rows, target_rows;
      std::size_t rows = 0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& clip = clips[order[k]];
        const auto frames = clip.motion.dim(0);
        for (std::size_t d = 0; d < config.draws_per_clip; ++d) {
          const int t = pick_t(rng);
          const double signal = std::sqrt(schedule.alpha_bar(t));
          const double noise = std::sqrt(schedule.one_minus_alpha_bar(t));
          for (double x : clip.motion.data()) noisy_rows.push_back(signal * x + noise * normal(rng));
          target_rows.insert(target_rows.end(), clip.motion.data().begin(), clip.motion.data().end());
          append_context(p, schedule.original_step(t), clip.condition, ctx_rows);
          rows += frames;
        }
      }

      ad::Tape tape;
      std::vector<Tensor> weights;
      for (const auto* w : p.trainable()) weights.push_back(tape.watch(*w));
      const Tensor parts[2] = {Tensor({rows, cfg.pose_size()}, std::move(noisy_rows)),
                               Tensor({rows, context_width(cfg)}, std::move(ctx_rows))};
      const Tensor input = ad::concat(parts, 1);
      const Tensor pred =
          mlp(input, weights[0], weights[1], weights[2], weights[3], weights[4], weights[5]);
      const Tensor target({rows, cfg.pose_size()}, std::move(target_rows));
      const Tensor loss = ad::mean(ad::square(pred - target));
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NonFiniteError("training loss became non-finite at update " + std::to_string(update),
                             static_cast<int>(update), loss_value);
      }
      const auto grads = tape.backward(loss);
      auto targets = p.trainable();
      for (std::size_t w = 0; w < targets.size(); ++w) {
        auto dst = targets[w]->mutable_data();
        const auto g = grads[weights[w]].data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= config.lr * g[i];
      }
      result.loss_history.push_back(loss_value);
      ++update;
    }
  }
  return result;
}

void save_checkpoint(const DenoiserParams& params, const VarianceSchedule& schedule,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << checkpoint_to_json(params, schedule).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint '" + path.string() + "': " + e.what(), e.byte);
  }
  return checkpoint_from_json(j);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const VarianceSchedule& expected) {
  auto ckpt = load_checkpoint(path);
  if (ckpt.schedule.fingerprint() != expected.fingerprint()) {
    throw std::invalid_argument("checkpoint schedule fingerprint " + ckpt.schedule.fingerprint() +
                                " does not match requested schedule " + expected.fingerprint());
  }
  return ckpt;
}

}  // namespace gestinv
