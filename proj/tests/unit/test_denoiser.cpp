#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "gestinv/corpus.hpp"
#include "gestinv/denoiser.hpp"
#include "gestinv/error.hpp"
#include "test_support.hpp"

using namespace gestinv;
using ad::Tensor;
using testing::fd_grad;
using testing::random_tensor;
using testing::rel_inf_error;
using testing::small_condition;
using testing::small_params;
using testing::values;

namespace {

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> channel(const MotionSequence& m, std::size_t j, std::size_t r) {
  std::vector<double> out;
  for (std::size_t f = 0; f < m.frames(); ++f) out.push_back(m.at(f, j, r));
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("gestinv_unit_" + name);
}

}  // namespace

TEST_SUITE("denoiser") {
  TEST_CASE("output shape equals input shape") {
    for (const auto& [frames, joints] : {std::pair<std::size_t, std::size_t>{10, 4}, {60, 16}}) {
      DenoiserConfig c;
      c.joints = joints;
      c.hidden = 32;
      const auto p = DenoiserParams::init(c, 1);
      const auto x = random_tensor({frames, joints, 3}, 2);
      const auto out = denoise(p, x, 17, small_condition(p, frames));
      CHECK(out.shape() == x.shape());
      CHECK(ad::all_finite(out));
    }
  }

  TEST_CASE("repeated calls are bit-identical and init is seeded") {
    const auto p = small_params();
    const auto x = random_tensor({8, 4, 3}, 4);
    const auto c = small_condition(p, 8);
    CHECK(values(denoise(p, x, 5, c)) == values(denoise(p, x, 5, c)));
    const auto q = small_params(1000, 3);
    CHECK(values(p.w1) == values(q.w1));
    CHECK(values(p.w1) != values(small_params(1000, 4).w1));
  }

  TEST_CASE("gradient with respect to x_t matches central differences") {
    const auto p = small_params();
    const auto c = small_condition(p, 5);
    const auto x = random_tensor({5, 4, 3}, 6);
    auto f = [&](const Tensor& v) { return ad::sum(denoise(p, v, 300, c)); };
    const auto analytic = values(testing::tape_grad(f, x));
    const auto numeric = fd_grad([&](const Tensor& v) { return f(v).item(); }, x, 1e-5);
    CHECK(rel_inf_error(analytic, numeric) < 1e-5);
  }

  TEST_CASE("gradient with respect to a weight matrix matches central differences") {
    const auto p = small_params();
    const auto c = small_condition(p, 4);
    const auto x = random_tensor({4, 4, 3}, 7);
    const auto r = random_tensor({4, 4, 3}, 8);
    auto f = [&](const Tensor& w2) {
      auto q = p;
      q.w2 = w2;
      return ad::inner(denoise(q, x, 40, c), r);
    };
    const std::vector<std::size_t> coords{0, 17, 100, 255};
    const auto g = testing::tape_grad(f, p.w2);
    const auto numeric = fd_grad([&](const Tensor& v) { return f(v).item(); }, p.w2, 1e-5, coords);
    CHECK(rel_inf_error(testing::pick(g, coords), numeric) < 1e-5);
  }

  TEST_CASE("the prediction depends on speaker, speech and timestep") {
    const auto p = small_params();
    const auto x = random_tensor({6, 4, 3}, 9);
    const auto c = small_condition(p, 6);
    const auto base = values(denoise(p, x, 50, c));
    auto other = c;
    other.speaker_id = 1;
    CHECK(values(denoise(p, x, 50, other)) != base);
    other = c;
    other.speech_features[0] += 0.1;
    CHECK(values(denoise(p, x, 50, other)) != base);
    CHECK(values(denoise(p, x, 51, c)) != base);
  }

  TEST_CASE("bad shapes, timesteps and conditions are rejected") {
    const auto p = small_params(100);
    const auto c = small_condition(p, 6);
    CHECK_THROWS_AS(denoise(p, random_tensor({6, 5, 3}, 1), 10, c), ShapeError);
    CHECK_THROWS_AS(denoise(p, random_tensor({6, 4, 3}, 1), 0, c), std::out_of_range);
    CHECK_THROWS_AS(denoise(p, random_tensor({6, 4, 3}, 1), 101, c), std::out_of_range);
    CHECK_THROWS_AS(denoise(p, random_tensor({7, 4, 3}, 1), 10, c), std::invalid_argument);
    auto bad = c;
    bad.speaker_id = 2;
    CHECK_THROWS_AS(denoise(p, random_tensor({6, 4, 3}, 1), 10, bad), std::invalid_argument);
  }

  TEST_CASE("noised follows the forward diffusion") {
    const auto s = VarianceSchedule::build(2, 0.1, 0.2, BetaSpacing::kLinear);
    const auto x0 = random_tensor({3, 2, 3}, 10);
    const auto z = random_tensor({3, 2, 3}, 11);
    CHECK(values(noised(x0, 0, s, z)) == values(x0));
    const auto from_zero = noised(Tensor::zeros(x0.shape()), 2, s, z);
    for (std::size_t i = 0; i < z.size(); ++i) {
      CHECK(from_zero[i] == doctest::Approx(std::sqrt(1 - s.alpha_bar(2)) * z[i]).epsilon(1e-15));
    }
    const auto mixed = noised(x0, 2, s, z);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double hand = std::sqrt(0.72) * x0[i] + std::sqrt(0.28) * z[i];
      CHECK(std::abs(mixed[i] - hand) < 1e-12);
    }
    CHECK_THROWS_AS(noised(x0, 1, s, random_tensor({3, 2, 2}, 1)), ShapeError);
  }

  TEST_CASE("zero epochs return the parameters unchanged") {
    const auto corpus = synth_corpus(7, 2, 10);
    // Corpus lives on the 16-joint skeleton.
    DenoiserConfig c;
    c.hidden = 8;
    c.max_timestep = 100;
    const auto q = DenoiserParams::init(c, 2);
    TrainConfig tc;
    tc.epochs = 0;
    const auto s = VarianceSchedule::build(100, 1e-4, 0.02, BetaSpacing::kLinear);
    const auto r = train(q, corpus.training_clips(), s, tc);
    CHECK(r.loss_history.empty());
    const auto a = q.trainable();
    const auto b = r.params.trainable();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(values(*a[i]) == values(*b[i]));
  }

  TEST_CASE("training is deterministic and lowers the loss") {
    DenoiserConfig c;
    c.hidden = 16;
    c.max_timestep = 100;
    const auto q = DenoiserParams::init(c, 2);
    const auto corpus = synth_corpus(7, 8, 12);
    const auto s = VarianceSchedule::build(100, 1e-4, 0.02, BetaSpacing::kLinear);
    TrainConfig tc;
    tc.epochs = 20;
    const auto r1 = train(q, corpus.training_clips(), s, tc);
    const auto r2 = train(q, corpus.training_clips(), s, tc);
    CHECK(r1.loss_history == r2.loss_history);
    CHECK(values(r1.params.w3) == values(r2.params.w3));
    // One update per batch of 8 clips.
    CHECK(r1.loss_history.size() == 20);
    CHECK(r1.loss_history.back() < r1.loss_history.front());
  }

  TEST_CASE("training rejects an empty corpus and a too-long schedule") {
    const auto q = small_params(100);
    const auto s = VarianceSchedule::build(100, 1e-4, 0.02, BetaSpacing::kLinear);
    CHECK_THROWS_AS(train(q, {}, s, {}), std::invalid_argument);
    DenoiserConfig c;
    c.max_timestep = 50;
    const auto corpus = synth_corpus(7, 1, 4);
    CHECK_THROWS_AS(train(DenoiserParams::init(c, 1), corpus.training_clips(), s, {}),
                    std::invalid_argument);
  }

  TEST_CASE("a diverging learning rate reports the update index") {
    DenoiserConfig c;
    c.hidden = 8;
    c.max_timestep = 100;
    const auto corpus = synth_corpus(7, 4, 8);
    const auto s = VarianceSchedule::build(100, 1e-4, 0.02, BetaSpacing::kLinear);
    TrainConfig tc;
    tc.epochs = 200;
    tc.lr = 1e6;
    try {
      (void)train(DenoiserParams::init(c, 1), corpus.training_clips(), s, tc);
      FAIL("expected divergence");
    } catch (const NonFiniteError& e) {
      CHECK(e.step() >= 0);
      CHECK(std::string(e.what()).find("update") != std::string::npos);
    }
  }

  TEST_CASE("checkpoint round trip preserves weights and checks the schedule fingerprint") {
    const auto p = small_params(100);
    const auto s = VarianceSchedule::build(100, 1e-4, 0.02, BetaSpacing::kLinear);
    const auto path = temp_file("ckpt.json");
    save_checkpoint(p, s, path);
    const auto back = load_checkpoint(path, s);
    CHECK(back.params.config == p.config);
    CHECK(back.params.rng_seed == p.rng_seed);
    const auto a = p.trainable();
    const auto b = back.params.trainable();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(values(*a[i]) == values(*b[i]));
    CHECK(back.schedule.fingerprint() == s.fingerprint());
    const auto other = VarianceSchedule::build(100, 1e-4, 0.03, BetaSpacing::kLinear);
    CHECK_THROWS_AS(load_checkpoint(path, other), std::invalid_argument);
    std::filesystem::remove(path);
  }
}

TEST_SUITE("corpus") {
  TEST_CASE("the same seed reproduces the corpus bit-identically") {
    const auto a = synth_corpus(7, 4, 60);
    const auto b = synth_corpus(7, 4, 60);
    REQUIRE(a.clips.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a.clips[i].motion.values() == b.clips[i].motion.values());
      CHECK(a.clips[i].condition == b.clips[i].condition);
    }
    CHECK(synth_corpus(8, 4, 60).clips[0].motion.values() != a.clips[0].motion.values());
  }

  TEST_CASE("clips sharing a condition but not a latent differ") {
    const auto cond = synth_condition(11, 60, 0);
    const auto m1 = synth_clip(cond, synth_latent(1, 48));
    const auto m2 = synth_clip(cond, synth_latent(2, 48));
    double total = 0.0;
    int below = 0;
    for (std::size_t j = 0; j < 16; ++j) {
      for (std::size_t r = 0; r < 3; ++r) {
        const double c = correlation(channel(m1, j, r), channel(m2, j, r));
        total += c;
        if (c < 1.0 - 1e-9) ++below;
      }
    }
    CHECK(below == 48);
    CHECK(total / 48 < 0.9);
  }

  TEST_CASE("rotations stay within [-pi, pi]") {
    const auto corpus = synth_corpus(7, 16, 60);
    for (const auto& clip : corpus.clips) {
      for (double v : clip.motion.values()) REQUIRE(std::abs(v) <= std::numbers::pi);
    }
  }

  TEST_CASE("clips carry their condition and chain seed poses") {
    const auto corpus = synth_corpus(3, 3, 20);
    for (const auto& clip : corpus.clips) {
      REQUIRE(clip.motion.condition().has_value());
      CHECK(*clip.motion.condition() == clip.condition);
      CHECK(clip.condition.frames == 20);
      CHECK(clip.condition.speaker_id >= 0);
      CHECK(clip.condition.speaker_id < 2);
    }
    CHECK(corpus.clips[0].condition.seed_pose == std::vector<double>(48, 0.0));
    const auto& prev = corpus.clips[0].motion.values();
    const std::vector<double> last(prev.end() - 48, prev.end());
    CHECK(corpus.clips[1].condition.seed_pose == last);
    const auto training = corpus.training_clips();
    CHECK(training.size() == 3);
    CHECK(training[0].motion.shape() == ad::Shape{20, 16, 3});
  }

  TEST_CASE("corpus preconditions") {
    CHECK_THROWS_AS(synth_corpus(1, 0, 10), std::invalid_argument);
    CHECK_THROWS_AS(synth_corpus(1, 1, 1), std::invalid_argument);
    CorpusConfig bad;
    bad.latent_amplitude_max = 1.5;
    CHECK_THROWS_AS(synth_latent(1, 48, bad), std::invalid_argument);
  }
}
