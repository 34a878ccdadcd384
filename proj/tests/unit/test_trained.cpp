#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gestinv/corpus.hpp"
#include "gestinv/denoiser.hpp"
#include "gestinv/losses.hpp"
#include "gestinv/optimizer.hpp"
#include "gestinv/sampler.hpp"
#include "test_support.hpp"

using namespace gestinv;
using testing::fixture_path;

// Runs against the checkpoint written by the `fixture.toy100` ctest step
// (`gestinv train --steps 100`): default toy config, T = 100.

namespace {

const Checkpoint& model() {
  static const Checkpoint ckpt = load_checkpoint(fixture_path("toy100.json"));
  return ckpt;
}

const SyntheticCorpus& corpus() {
  static const SyntheticCorpus c = synth_corpus(7, 64, 60);
  return c;
}

double rms(const ad::Tensor& a, const ad::Tensor& b) {
  return ad::l2_norm(a - b) / std::sqrt(static_cast<double>(a.size()));
}

std::vector<double> loss_csv(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in);
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "update,loss");
  std::vector<double> v;
  while (std::getline(in, line)) v.push_back(std::stod(line.substr(line.find(',') + 1)));
  return v;
}

// Block means over consecutive windows of `w` updates.
std::vector<double> smoothed(const std::vector<double>& v, std::size_t w) {
  std::vector<double> out;
  for (std::size_t i = 0; i + w <= v.size(); i += w) {
    double s = 0.0;
    for (std::size_t k = i; k < i + w; ++k) s += v[k];
    out.push_back(s / static_cast<double>(w));
  }
  return out;
}

double round_trip_error(const VarianceSchedule& s, const Denoiser& eps, std::uint64_t seed,
                        const SamplerConfig& cfg) {
  const auto x_T = gaussian({60, 16, 3}, seed);
  const auto g = generate(x_T, eps, s, cfg);
  const auto back = invert(g.x0, g.y0, eps, s, cfg, g.ledger);
  return std::max(ad::max_abs(back.x - x_T), ad::max_abs(back.y - x_T));
}

}  // namespace

TEST_SUITE("trained-model") {
  TEST_CASE("training shrinks the smoothed loss below 0.3 of its start") {
    const auto v = loss_csv(fixture_path("toy100_loss.csv"));
    REQUIRE(v.size() >= 20);
    const auto s = smoothed(v, 10);
    MESSAGE("smoothed loss " << s.front() << " -> " << s.back() << " (ratio " << s.back() / s.front()
                             << ")");
    CHECK(s.back() < 0.3 * s.front());
  }

  TEST_CASE("checkpoint carries the T = 100 schedule") {
    CHECK(model().schedule.total_steps() == 100);
    CHECK(model().params.config.max_timestep == 100);
  }

  TEST_CASE("exact inversion at T = 10 and 50 over seeds") {
    const auto& c = corpus().clips[0].condition;
    const auto eps = bind_denoiser(model().params, c);
    for (int n : {10, 50}) {
      const auto s = respace(model().schedule, n, RespaceOrigin::kFirstStride);
      double worst = 0.0;
      for (std::uint64_t seed = 100; seed < 110; ++seed) {
        worst = std::max(worst, round_trip_error(s, eps, seed, {}));
      }
      MESSAGE("T=" << n << " worst round trip " << worst);
      CHECK(worst <= 1e-6);
    }
  }

  TEST_CASE("recorded noise replays through inversion with the same tolerance") {
    const auto eps = bind_denoiser(model().params, corpus().clips[1].condition);
    const auto s = respace(model().schedule, 50, RespaceOrigin::kFirstStride);
    SamplerConfig rec;
    rec.noise_mode = NoiseMode::kRecorded;
    rec.noise_seed = 11;
    for (std::uint64_t seed : {3, 4, 5}) {
      CHECK(round_trip_error(s, eps, seed, rec) <= 1e-6);
    }
    // The draws really entered the trajectory.
    const auto x_T = gaussian({60, 16, 3}, 3);
    const auto det = generate(x_T, eps, s, {});
    const auto stoch = generate(x_T, eps, s, rec);
    CHECK(stoch.ledger.draws().size() == 50);
    CHECK(ad::max_abs(det.x0 - stoch.x0) > 1e-3);
  }

  TEST_CASE("the two arms end slightly apart") {
    const auto eps = bind_denoiser(model().params, corpus().clips[0].condition);
    for (std::uint64_t seed : {10, 11, 12, 13, 14}) {
      const auto g = generate(gaussian({60, 16, 3}, seed), eps, model().schedule, {});
      const double d = ad::max_abs(g.x0 - g.y0);
      // Measured 0.024 .. 0.035 on this checkpoint.
      CHECK(d > 0.0);
      CHECK(d < 0.06);
    }
  }

  TEST_CASE("inversion error grows with step count") {
    const auto& full = model().schedule;
    const auto eps = bind_denoiser(model().params, corpus().clips[0].condition);
    // 99 is every timestep but the non-invertible final one.
    double prev = 0.0;
    for (int n : {10, 50, 99}) {
      const auto s = respace(full, n, RespaceOrigin::kFirstStride);
      double worst = 0.0;
      for (std::uint64_t seed = 100; seed < 103; ++seed) {
        try {
          worst = std::max(worst, round_trip_error(s, eps, seed, {}));
        } catch (const std::exception&) {
          worst = INFINITY;
        }
      }
      std::printf("  stability T=%-3d worst round trip %.3e%s\n", n, worst,
                  n > 50 && !(worst <= 1e-6) ? "  [flagged: over 1e-6]" : "");
      if (n == 50) CHECK(worst <= 1e-6);
      CHECK(worst >= prev);
      prev = worst;
    }
  }

  TEST_CASE("regeneration under the same condition stays near the input") {
    const auto& full = model().schedule;
    const auto inv = respace(full, 50, RespaceOrigin::kFirstStride);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& clip = corpus().clips[i];
      const auto eps = bind_denoiser(model().params, clip.condition);
      const auto fresh = generate(gaussian({60, 16, 3}, 900 + i), eps, full, {}).x0;

      // A motion the model generated itself: measured 0.044 .. 0.069 RMS.
      const auto gen = generate(gaussian({60, 16, 3}, 10 + i), eps, full, {}).x0;
      const auto re_gen =
          regenerate_with_style(gen, clip.condition, clip.condition, model().params, full, inv, {});
      CHECK(rms(gen, re_gen) < 0.1);

      // An imported corpus clip (y0 := x0): measured 0.349 .. 0.361 RMS,
      // still closer than a fresh sample (0.42 .. 0.44).
      const auto x0 = clip.motion.to_tensor();
      const auto re_imp =
          regenerate_with_style(x0, clip.condition, clip.condition, model().params, full, inv, {});
      CHECK(rms(x0, re_imp) < 0.4);
      CHECK(rms(x0, re_imp) < rms(x0, fresh));
    }
  }

  TEST_CASE("outputs depend on the condition") {
    const auto x_t = gaussian({60, 16, 3}, 5);
    const auto& a = corpus().clips[0].condition;
    const auto& b = corpus().clips[1].condition;
    for (int t : {1, 50, 100}) {
      const auto ya = denoise(model().params, x_t, t, a);
      CHECK(ad::max_abs(ya - denoise(model().params, x_t, t, a)) == 0.0);
      CHECK(rms(ya, denoise(model().params, x_t, t, b)) > 1e-2);
    }
  }

  TEST_CASE("a 1e-6 perturbation moves the output by less than 1e-2") {
    const auto& c = corpus().clips[0].condition;
    const auto x_t = gaussian({60, 16, 3}, 5);
    for (std::uint64_t seed : {6, 7, 8}) {
      auto d = gaussian({60, 16, 3}, seed);
      d = d * (1e-6 / ad::l2_norm(d));
      for (int t : {1, 50, 100}) {
        const double moved =
            ad::l2_norm(denoise(model().params, x_t + d, t, c) - denoise(model().params, x_t, t, c));
        CHECK(moved < 1e-2);
      }
    }
  }

  TEST_CASE("a 3-step symmetry edit lowers the symmetry loss") {
    const auto skel = Skeleton::default_skeleton();
    const auto s = respace(model().schedule, 50, RespaceOrigin::kFirstStride);
    EditSpec spec;
    spec.kind = LossKind::kSymmetry;
    const auto loss = make_edit_loss({spec}, skel);
    const auto eps = bind_denoiser(model().params, corpus().clips[2].condition);
    const auto x_T = gaussian({60, 16, 3}, 21);
    const auto before = generate(x_T, eps, s, {}).x0;
    const auto trace = optimize_noise(x_T, x_T, eps, s, {}, {}, loss);
    REQUIRE_FALSE(trace.error);
    REQUIRE(trace.records.size() == 4);
    CHECK(trace.records[0].relative_loss == 1.0);
    CHECK(loss_symmetry(trace.x0, skel.mirror()).item() < loss_symmetry(before, skel.mirror()).item());
  }
}

TEST_SUITE("training-curve") {
  // Minibatch SGD over random timesteps: the literal property does not hold on
  // the default run (a few 10-update windows tick up by ~1%).
  TEST_CASE("smoothed training loss never increases") {
    const auto s = smoothed(loss_csv(fixture_path("toy100_loss.csv")), 10);
    std::size_t ups = 0;
    for (std::size_t i = 1; i < s.size(); ++i) ups += s[i] > s[i - 1];
    MESSAGE(ups << " of " << s.size() - 1 << " windows increase");
    CHECK(ups == 0);
  }
}

TEST_SUITE("edit-strength") {
  // With z = 0 the generation map contracts the input noise by the product of
  // a_t (3.8e-4 over this 50-step schedule), so x0 barely moves with x_T.
  TEST_CASE("one default step at least halves a frame-joint loss") {
    const auto skel = Skeleton::default_skeleton();
    const auto s = respace(model().schedule, 50, RespaceOrigin::kFirstStride);
    const auto eps = bind_denoiser(model().params, corpus().clips[4].condition);
    const auto x_T = gaussian({60, 16, 3}, 33);
    const auto before = generate(x_T, eps, s, {}).x0;
    EditSpec spec;
    spec.kind = LossKind::kFrameJoint;
    spec.frames = {20, 21, 22, 23, 24, 25};
    spec.joints = {8};
    for (std::size_t r = 0; r < 3; ++r) spec.targets.push_back(before[(22 * 16 + 8) * 3 + r] + 0.3);
    const auto trace = optimize_noise(x_T, x_T, eps, s, {}, {}, make_edit_loss({spec}, skel));
    REQUIRE_FALSE(trace.error);
    MESSAGE("relative loss at s=1: " << trace.records[1].relative_loss);
    CHECK(trace.records[1].relative_loss < 1.0);
    CHECK(trace.records[1].relative_loss <= 0.5);
  }
}
