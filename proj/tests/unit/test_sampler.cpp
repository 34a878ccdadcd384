#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "gestinv/error.hpp"
#include "gestinv/sampler.hpp"
#include "test_support.hpp"

using namespace gestinv;
using ad::Tensor;
using testing::random_tensor;
using testing::small_condition;
using testing::small_params;
using testing::values;

namespace {

Denoiser scaled_stub(double k) {
  return [k](const Tensor& x, int) { return ad::scale(x, k); };
}

Denoiser constant_stub(double c) {
  return [c](const Tensor& x, int) {
    std::vector<double> v(x.size(), c);
    return Tensor(x.shape(), std::move(v));
  };
}

// Smooth nonlinear stub; depends on the timestep so step indexing matters.
Denoiser nonlinear_stub() {
  return [](const Tensor& x, int t) {
    return ad::tanh(ad::scale(x, 0.8)) + ad::scale(x, 0.01 * (t % 7));
  };
}

double max_diff(const Tensor& a, const Tensor& b) { return ad::max_abs(a - b); }

SamplerConfig with_p(double p) {
  SamplerConfig c;
  c.mixing_p = p;
  return c;
}

}  // namespace

TEST_SUITE("coupled-sampler") {
  TEST_CASE("the terminal plain step returns the prediction") {
    const auto s = VarianceSchedule::build(10, 1e-4, 0.02, BetaSpacing::kLinear);
    const auto x = random_tensor({3, 2, 3}, 1);
    const auto eps = nonlinear_stub();
    CHECK(values(step_plain(x, 1, eps, s)) == values(eps(x, 1)));
  }

  TEST_CASE("a zero denoiser leaves only the a_t x_t path") {
    const auto s = VarianceSchedule::build(10, 1e-4, 0.02, BetaSpacing::kLinear);
    const auto x = random_tensor({3, 2, 3}, 2);
    const auto out = step_plain(x, 6, scaled_stub(0.0), s);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == s.a(6) * x[i]);
  }

  TEST_CASE("three plain steps with a half-scaling stub give the coefficient product") {
    const auto s = VarianceSchedule::build(3, 0.1, 0.3, BetaSpacing::kLinear);
    const auto x = random_tensor({2, 2, 3}, 3);
    Tensor v = x;
    for (int t = 3; t >= 1; --t) v = step_plain(v, t, scaled_stub(0.5), s);
    // Scalar recursion from the hand formulas.
    double k = 1.0;
    for (int t = 3; t >= 1; --t) {
      const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1), beta = s.beta(t);
      const double a = (1 - ab_prev) * std::sqrt(1 - beta) / (1 - ab);
      const double b = beta * std::sqrt(ab_prev) / (1 - ab);
      k *= a + 0.5 * b;
    }
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(v[i] - k * x[i]) < 1e-12);
  }

  TEST_CASE("full mixing weight leaves the sequential pair unmixed") {
    const auto s = VarianceSchedule::build(10, 1e-4, 0.02, BetaSpacing::kLinear);
    const auto eps = nonlinear_stub();
    const CoupledState st{random_tensor({3, 2, 3}, 4), random_tensor({3, 2, 3}, 5), 7};
    const auto out = step_coupled(st, eps, s, with_p(1.0));
    const double a = s.a(7), b = s.b(7);
    const Tensor x = ad::scale(st.x, a) + ad::scale(eps(st.y, 7), b);
    const Tensor y = ad::scale(st.y, a) + ad::scale(eps(x, 7), b);
    CHECK(values(out.x) == values(x));
    CHECK(values(out.y) == values(y));
    CHECK(out.t == 6);
  }

  TEST_CASE("a constant denoiser keeps equal arms equal") {
    const auto s = VarianceSchedule::build(10, 1e-4, 0.02, BetaSpacing::kLinear);
    const auto x = random_tensor({3, 2, 3}, 6);
    const auto out = step_coupled({x, x, 5}, constant_stub(0.3), s, with_p(0.93));
    CHECK(values(out.x) == values(out.y));
  }

  TEST_CASE("one coupled step with a linear stub matches the 2x2 affine hand result") {
    const auto s = VarianceSchedule::build(4, 0.1, 0.4, BetaSpacing::kLinear);
    const double a = s.a(3), b = s.b(3), p = 0.9;
    const Tensor x({1}, {0.7}), y({1}, {-0.4});
    auto eps = scaled_stub(0.5);
    const auto out = step_coupled({x, y, 3}, eps, s, with_p(p));
    const double x1 = a * 0.7 + b * 0.5 * -0.4;
    const double y1 = a * -0.4 + b * 0.5 * x1;
    CHECK(std::abs(out.x[0] - (p * x1 + (1 - p) * y1)) < 1e-12);
    CHECK(std::abs(out.y[0] - ((1 - p) * x1 + p * y1)) < 1e-12);
  }

  TEST_CASE("step_inverse undoes step_coupled") {
    const auto s = VarianceSchedule::build(20, 1e-4, 0.02, BetaSpacing::kLinear);
    const auto eps = nonlinear_stub();
    const auto z = random_tensor({4, 2, 3}, 9);
    for (double p : {0.6, 0.8, 0.93, 1.0}) {
      for (int t : {2, 5, 20}) {
        CAPTURE(p);
        CAPTURE(t);
        const CoupledState st{random_tensor({4, 2, 3}, 7), random_tensor({4, 2, 3}, 8), t};
        for (const Tensor* noise : {static_cast<const Tensor*>(nullptr), &z}) {
          const auto fwd = step_coupled(st, eps, s, with_p(p), noise);
          const auto back = step_inverse(fwd, eps, s, with_p(p), noise);
          CHECK(back.t == t);
          CHECK(max_diff(back.x, st.x) <= 1e-10);
          CHECK(max_diff(back.y, st.y) <= 1e-10);
        }
      }
    }
  }

  TEST_CASE("the step with a(1) = 0 cannot be inverted") {
    const auto s = VarianceSchedule::build(5, 1e-4, 0.02, BetaSpacing::kLinear);
    const CoupledState st{random_tensor({2, 2, 3}, 1), random_tensor({2, 2, 3}, 2), 0};
    try {
      (void)step_inverse(st, nonlinear_stub(), s, {});
      FAIL("expected InversionError");
    } catch (const InversionError& e) {
      CHECK(std::string(e.what()).find("terminal step not invertible") != std::string::npos);
      CHECK(e.step() == 1);
    }
  }

  TEST_CASE("mixing matrix times its inverse is the identity") {
    const double p = 0.93;
    const Tensor e1({1}, {1.0}), e0({1}, {0.0});
    const auto [c1x, c1y] = unmix(mix(e1, e0, p).first, mix(e1, e0, p).second, p);
    const auto [c2x, c2y] = unmix(mix(e0, e1, p).first, mix(e0, e1, p).second, p);
    CHECK(std::abs(c1x[0] - 1.0) < 1e-14);
    CHECK(std::abs(c1y[0]) < 1e-14);
    CHECK(std::abs(c2x[0]) < 1e-14);
    CHECK(std::abs(c2y[0] - 1.0) < 1e-14);
  }

  TEST_CASE("unmix after mix is the identity and p = 0.5 is rejected") {
    const auto x = random_tensor({5, 4, 3}, 11, -3, 3);
    const auto y = random_tensor({5, 4, 3}, 12, -3, 3);
    for (double p : {0.6, 0.8, 0.93, 1.0}) {
      const auto [mx, my] = mix(x, y, p);
      const auto [ux, uy] = unmix(mx, my, p);
      CHECK(max_diff(ux, x) <= 1e-12);
      CHECK(max_diff(uy, y) <= 1e-12);
    }
    CHECK_THROWS_AS(unmix(x, y, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(with_p(0.5).validate(), std::invalid_argument);
    CHECK_THROWS_AS(with_p(0.3).validate(), std::invalid_argument);
    CHECK_THROWS_AS(with_p(1.01).validate(), std::invalid_argument);
    CHECK_NOTHROW(with_p(1.0).validate());
    CHECK_NOTHROW(with_p(0.51).validate());
  }

  TEST_CASE("a one-step generation returns the prediction on both arms") {
    const auto s = VarianceSchedule::build(1, 0.02, 0.02, BetaSpacing::kLinear);
    const auto x = random_tensor({3, 2, 3}, 13);
    const auto g = generate(x, constant_stub(0.25), s, {});
    CHECK(values(g.x0) == std::vector<double>(x.size(), 0.25));
    CHECK(values(g.y0) == std::vector<double>(x.size(), 0.25));
    const auto eps = nonlinear_stub();
    const auto h = generate(x, eps, s, with_p(1.0));
    CHECK(values(h.x0) == values(eps(x, 1)));
  }

  TEST_CASE("deterministic generation is repeatable") {
    const auto p = small_params(100);
    const auto c = small_condition(p, 6);
    const auto s = VarianceSchedule::build(100, 1e-4, 0.02, BetaSpacing::kLinear);
    const auto x = random_tensor({6, 4, 3}, 14);
    const auto a = generate(x, bind_denoiser(p, c), s, {});
    const auto b = generate(x, bind_denoiser(p, c), s, {});
    CHECK(values(a.x0) == values(b.x0));
    CHECK(values(a.y0) == values(b.y0));
    CHECK(a.ledger.mode() == NoiseMode::kDeterministic);
    CHECK(a.ledger.draws().empty());
  }

  TEST_CASE("generate then invert recovers the noise on an untrained network") {
    const auto p = small_params(1000);
    const auto c = small_condition(p, 6);
    const auto full = VarianceSchedule::default_schedule();
    const auto eps = bind_denoiser(p, c);
    for (int n : {10, 50}) {
      CAPTURE(n);
      const auto s = respace(full, n, RespaceOrigin::kFirstStride);
      const auto x = random_tensor({6, 4, 3}, 15 + n);
      const auto g = generate(x, eps, s, {});
      const auto back = invert(g.x0, g.y0, eps, s, {});
      CHECK(back.t == n);
      CHECK(max_diff(back.x, x) <= 1e-6);
      CHECK(max_diff(back.y, x) <= 1e-6);
    }
  }

  TEST_CASE("recorded noise is replayed exactly by inversion") {
    const auto s = respace(VarianceSchedule::default_schedule(), 20, RespaceOrigin::kFirstStride);
    const auto eps = nonlinear_stub();
    const auto x = random_tensor({4, 2, 3}, 16);
    SamplerConfig cfg;
    cfg.noise_mode = NoiseMode::kRecorded;
    cfg.noise_seed = 99;
    const auto g = generate(x, eps, s, cfg);
    CHECK(g.ledger.mode() == NoiseMode::kRecorded);
    CHECK(g.ledger.draws().size() == 20);
    const auto det = generate(x, eps, s, {});
    CHECK(max_diff(g.x0, det.x0) > 1e-6);  // the noise did something
    const auto back = invert(g.x0, g.y0, eps, s, cfg, g.ledger);
    CHECK(max_diff(back.x, x) <= 1e-6);
    CHECK(max_diff(back.y, x) <= 1e-6);
    // Same seed, same draws.
    CHECK(generate(x, eps, s, cfg).ledger == g.ledger);
  }

  TEST_CASE("a missing ledger entry stops inversion") {
    const auto s = respace(VarianceSchedule::default_schedule(), 5, RespaceOrigin::kFirstStride);
    const auto x = random_tensor({2, 2, 3}, 17);
    CHECK_THROWS_AS(invert(x, x, nonlinear_stub(), s, {}, NoiseLedger::recorded(1)),
                    InversionError);
  }

  TEST_CASE("ledgers encode, decode and persist") {
    auto ledger = NoiseLedger::recorded(42);
    (void)ledger.draw(1, {2, 3});
    (void)ledger.draw(7, {2, 3});
    const auto back = NoiseLedger::decode(ledger.encode());
    CHECK(back == ledger);
    CHECK(back.seed() == 42);
    CHECK(values(back.draws().at(7)) == values(ledger.draws().at(7)));
    const auto path = std::filesystem::temp_directory_path() / "gestinv_unit_ledger.bin";
    ledger.save(path);
    CHECK(NoiseLedger::load(path) == ledger);
    std::filesystem::remove(path);
    CHECK(NoiseLedger::decode(NoiseLedger::deterministic().encode()) == NoiseLedger::deterministic());
    auto bytes = ledger.encode();
    bytes[0] ^= 0xff;
    CHECK_THROWS_AS(NoiseLedger::decode(bytes), ParseError);
    bytes = ledger.encode();
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_AS(NoiseLedger::decode(bytes), ParseError);
    bytes = ledger.encode();
    bytes.push_back(0);
    CHECK_THROWS_AS(NoiseLedger::decode(bytes), ParseError);
  }

  TEST_CASE("noise pairs persist with their step map") {
    const NoisePair pair{random_tensor({3, 2, 3}, 18), random_tensor({3, 2, 3}, 19), {20, 40, 60}};
    const auto path = std::filesystem::temp_directory_path() / "gestinv_unit_noise.bin";
    save_noise_pair(pair, path);
    const auto back = load_noise_pair(path);
    CHECK(values(back.x_T) == values(pair.x_T));
    CHECK(values(back.y_T) == values(pair.y_T));
    CHECK(back.step_map == pair.step_map);
    std::filesystem::remove(path);
  }

  TEST_CASE("single-step and clean-anchored schedules are rejected by invert") {
    const auto full = VarianceSchedule::build(100, 1e-4, 0.02, BetaSpacing::kLinear);
    const auto x = random_tensor({2, 2, 3}, 20);
    CHECK_THROWS_AS(invert(x, x, nonlinear_stub(), respace(full, 1), {}), InversionError);
    CHECK_THROWS_AS(invert(x, x, nonlinear_stub(), respace(full, 10), {}), InversionError);
    const auto p = small_params(100);
    const auto c = small_condition(p, 4);
    const auto x0 = random_tensor({4, 4, 3}, 21);
    CHECK_THROWS_AS(regenerate_with_style(x0, c, c, p, full, respace(full, 1), {}), InversionError);
  }

  TEST_CASE("blow-ups are reported with the step") {
    const auto s = VarianceSchedule::build(10, 1e-4, 0.02, BetaSpacing::kLinear);
    const Denoiser bad = [](const Tensor& x, int t) {
      return t == 6 ? ad::scale(x, std::numeric_limits<double>::infinity()) : x;
    };
    try {
      (void)generate(random_tensor({2, 2, 3}, 22), bad, s, {});
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(e.step() == 5);
      CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
  }

  TEST_CASE("shape and range errors") {
    const auto s = VarianceSchedule::build(10, 1e-4, 0.02, BetaSpacing::kLinear);
    const auto eps = nonlinear_stub();
    CHECK_THROWS_AS(step_coupled({random_tensor({2, 2, 3}, 1), random_tensor({2, 3, 3}, 2), 3}, eps,
                                 s, {}),
                    ShapeError);
    CHECK_THROWS_AS(step_coupled({random_tensor({2, 2, 3}, 1), random_tensor({2, 2, 3}, 2), 0}, eps,
                                 s, {}),
                    std::out_of_range);
    const auto z = random_tensor({1, 2, 3}, 3);
    CHECK_THROWS_AS(step_plain(random_tensor({2, 2, 3}, 1), 3, eps, s, &z), ShapeError);
    CHECK(noise_mode_from_string(to_string(NoiseMode::kRecorded)) == NoiseMode::kRecorded);
    CHECK_THROWS_AS(noise_mode_from_string("cached"), std::invalid_argument);
  }
}
