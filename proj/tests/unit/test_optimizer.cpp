#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "gestinv/error.hpp"
#include "gestinv/optimizer.hpp"
#include "gestinv/serialization.hpp"
#include "test_support.hpp"

using namespace gestinv;
using ad::Tensor;
using testing::random_tensor;
using testing::rel_inf_error;
using testing::small_condition;
using testing::small_params;
using testing::values;

namespace {

using Mat2 = std::array<std::array<double, 2>, 2>;

Mat2 mul(const Mat2& a, const Mat2& b) {
  Mat2 c{};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
  return c;
}

// Coupled step with eps(v) = k v, followed by mixing, as a 2x2 map on (x, y).
Mat2 step_matrix(double a, double b, double k, double p) {
  const Mat2 seq{{{a, b * k}, {a * b * k, a + b * b * k * k}}};
  const Mat2 mixm{{{p, 1 - p}, {1 - p, p}}};
  return mul(mixm, seq);
}

LossFn inner_loss(const Tensor& r) {
  return [r](const Tensor& x0) { return ad::inner(x0, r); };
}

// 4-joint rig with one mirror pair so every loss kind applies to small_params.
Skeleton small_skeleton() {
  std::vector<Joint> joints = {{"root", -1, {0, 0, 0}}, {"spine", 0, {0, 1, 0}},
                               {"l_arm", 1, {1, 0, 0}}, {"r_arm", 1, {-1, 0, 0}}};
  MirrorMap m;
  m.pairs = {{2, 3}};
  m.sign_flip = sagittal_sign_flip("ZXY");
  return Skeleton(std::move(joints), "ZXY", m);
}

std::vector<EditSpec> all_specs() {
  EditSpec fj;
  fj.kind = LossKind::kFrameJoint;
  fj.frames = {0, 3};
  fj.joints = {2};
  fj.targets = {0.4, -0.2, 0.1};
  EditSpec mr;
  mr.kind = LossKind::kMotionRange;
  EditSpec v;
  v.kind = LossKind::kVelocity;
  v.direction = Direction::kMaximize;
  EditSpec s;
  s.kind = LossKind::kSymmetry;
  return {fj, mr, v, s};
}

struct Setup {
  DenoiserParams params = small_params(1000);
  ConditionVector cond = small_condition(params, 6);
  Denoiser eps = bind_denoiser(params, cond);
  Tensor x_T = random_tensor({6, 4, 3}, 31);
  Tensor y_T = random_tensor({6, 4, 3}, 32);
  VarianceSchedule schedule(int n) const {
    return respace(VarianceSchedule::default_schedule(), n, RespaceOrigin::kFirstStride);
  }
};

double loss_at(const Tensor& x, const Tensor& y, const Denoiser& eps, const VarianceSchedule& s,
               const LossFn& loss) {
  const auto g = generate_pair(x, y, eps, s, {});
  return loss(g.x0).item();
}

}  // namespace

TEST_SUITE("noise-optimizer") {
  TEST_CASE("full-cache gradient of a two-step linear chain matches the closed form") {
    const auto s = VarianceSchedule::build(2, 0.1, 0.2, BetaSpacing::kLinear);
    const double k = 0.5, p = 0.93;
    const Denoiser eps = [k](const Tensor& v, int) { return ad::scale(v, k); };
    const auto r = random_tensor({2, 2, 3}, 1);
    SamplerConfig cfg;
    cfg.mixing_p = p;
    const Mat2 total = mul(step_matrix(s.a(1), s.b(1), k, p), step_matrix(s.a(2), s.b(2), k, p));
    const auto x = random_tensor({2, 2, 3}, 2), y = random_tensor({2, 2, 3}, 3);
    for (const auto& g : {grad_full_cache(x, y, eps, s, cfg, inner_loss(r)),
                          grad_inversion_recompute(x, y, eps, s, cfg, inner_loss(r))}) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(std::abs(g.grad_x[i] - total[0][0] * r[i]) < 1e-12);
        CHECK(std::abs(g.grad_y[i] - total[0][1] * r[i]) < 1e-12);
      }
    }
  }

  TEST_CASE("a loss that ignores x0 has zero gradient") {
    Setup u;
    const auto s = u.schedule(5);
    const LossFn flat = [](const Tensor& x0) { return ad::scale(ad::sum(x0), 0.0); };
    for (const auto& g : {grad_full_cache(u.x_T, u.y_T, u.eps, s, {}, flat),
                          grad_inversion_recompute(u.x_T, u.y_T, u.eps, s, {}, flat)}) {
      CHECK(ad::max_abs(g.grad_x) == 0.0);
      CHECK(ad::max_abs(g.grad_y) == 0.0);
    }
  }

  TEST_CASE("zero-prediction chain scales dL/dx0 by the product of a_t") {
    const auto s = respace(VarianceSchedule::default_schedule(), 12, RespaceOrigin::kFirstStride);
    const Denoiser zero = [](const Tensor& v, int) { return ad::scale(v, 0.0); };
    double prod = 1.0;
    for (int t = 1; t <= 12; ++t) prod *= s.a(t);
    const auto r = random_tensor({3, 2, 3}, 4);
    const auto x = random_tensor({3, 2, 3}, 5);
    SamplerConfig unmixed;
    unmixed.mixing_p = 1.0;
    const auto g1 = grad_inversion_recompute(x, x, zero, s, unmixed, inner_loss(r));
    const auto g2 = grad_inversion_recompute(x, x, zero, s, {}, inner_loss(r));
    for (std::size_t i = 0; i < r.size(); ++i) {
      CHECK(std::abs(g1.grad_x[i] - prod * r[i]) <= 1e-12 * std::abs(prod * r[i]) + 1e-300);
      CHECK(g1.grad_y[i] == 0.0);
      // Mixing rows sum to one, so the arms share the same total.
      CHECK(std::abs(g2.grad_x[i] + g2.grad_y[i] - prod * r[i]) <= 1e-12 * std::abs(r[i]));
    }
  }

  TEST_CASE("gradient paths agree for every loss kind") {
    Setup u;
    const auto skel = small_skeleton();
    for (int n : {5, 10, 20}) {
      const auto s = u.schedule(n);
      for (const auto& spec : all_specs()) {
        CAPTURE(n);
        CAPTURE(to_string(spec.kind));
        const auto loss = make_edit_loss({spec}, skel);
        const auto full = grad_full_cache(u.x_T, u.y_T, u.eps, s, {}, loss);
        const auto rec = grad_inversion_recompute(u.x_T, u.y_T, u.eps, s, {}, loss);
        CHECK(full.loss == doctest::Approx(rec.loss).epsilon(1e-12));
        const double scale = std::max(ad::max_abs(full.grad_x), ad::max_abs(full.grad_y));
        CHECK(ad::max_abs(rec.grad_x - full.grad_x) / (scale + 1e-300) <= 1e-5);
        CHECK(ad::max_abs(rec.grad_y - full.grad_y) / (scale + 1e-300) <= 1e-5);
      }
    }
  }

  TEST_CASE("both gradient paths match central differences at T = 5") {
    Setup u;
    const auto skel = small_skeleton();
    const auto s = u.schedule(5);
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> pick(0, u.x_T.size() - 1);
    std::vector<std::size_t> coords;
    while (coords.size() < 16) coords.push_back(pick(rng));
    for (const auto& spec : all_specs()) {
      CAPTURE(to_string(spec.kind));
      const auto loss = make_edit_loss({spec}, skel);
      const auto numeric = testing::fd_grad(
          [&](const Tensor& x) { return loss_at(x, u.y_T, u.eps, s, loss); }, u.x_T, 1e-4, coords);
      const auto full = grad_full_cache(u.x_T, u.y_T, u.eps, s, {}, loss);
      const auto rec = grad_inversion_recompute(u.x_T, u.y_T, u.eps, s, {}, loss);
      CHECK(rel_inf_error(testing::pick(full.grad_x, coords), numeric) <= 1e-4);
      CHECK(rel_inf_error(testing::pick(rec.grad_x, coords), numeric) <= 1e-4);
    }
  }

  TEST_CASE("the step meter holds two steps for recompute and T for the full cache") {
    Setup u;
    const auto skel = small_skeleton();
    const auto loss = make_edit_loss({all_specs()[1]}, skel);
    for (int n : {10, 100, 999}) {
      CAPTURE(n);
      const auto g = grad_inversion_recompute(u.x_T, u.y_T, u.eps, u.schedule(n), {}, loss);
      CHECK(g.retained_steps == 2);
    }
    const auto full_sched = VarianceSchedule::default_schedule();
    CHECK(grad_inversion_recompute(u.x_T, u.y_T, u.eps, full_sched, {}, loss).retained_steps == 2);
    for (int n : {10, 20}) {
      const auto g = grad_full_cache(u.x_T, u.y_T, u.eps, u.schedule(n), {}, loss);
      CHECK(g.retained_steps == n);
    }
    // Tape size grows with T only on the full-cache path.
    const auto r10 = grad_inversion_recompute(u.x_T, u.y_T, u.eps, u.schedule(10), {}, loss);
    const auto r20 = grad_inversion_recompute(u.x_T, u.y_T, u.eps, u.schedule(20), {}, loss);
    const auto f10 = grad_full_cache(u.x_T, u.y_T, u.eps, u.schedule(10), {}, loss);
    const auto f20 = grad_full_cache(u.x_T, u.y_T, u.eps, u.schedule(20), {}, loss);
    CHECK(r10.peak_tape_values == r20.peak_tape_values);
    CHECK(f20.peak_tape_values > f10.peak_tape_values);
  }

  TEST_CASE("the full cache refuses long schedules") {
    Setup u;
    const auto loss = make_edit_loss({all_specs()[1]}, small_skeleton());
    CHECK_THROWS_AS(grad_full_cache(u.x_T, u.y_T, u.eps, u.schedule(65), {}, loss),
                    std::invalid_argument);
    CHECK_NOTHROW(grad_full_cache(u.x_T, u.y_T, u.eps, u.schedule(65), {}, loss, 65));
    OptimizerConfig cfg;
    cfg.grad_path = GradPath::kFullCache;
    cfg.full_cache_cap = 8;
    CHECK_THROWS_AS(optimize_noise(u.x_T, u.y_T, u.eps, u.schedule(10), {}, cfg, loss),
                    std::invalid_argument);
  }

  TEST_CASE("a zero learning rate leaves the loss unchanged") {
    Setup u;
    const auto loss = make_edit_loss({all_specs()[0]}, small_skeleton());
    OptimizerConfig cfg;
    cfg.steps = 1;
    cfg.lr = 0.0;
    cfg.renorm_noise = false;
    const auto tr = optimize_noise(u.x_T, u.y_T, u.eps, u.schedule(10), {}, cfg, loss);
    REQUIRE(tr.records.size() == 2);
    CHECK(tr.records[1].loss == tr.records[0].loss);
    CHECK(tr.records[1].relative_loss == 1.0);
    CHECK(values(tr.x_T) == values(u.x_T));
  }

  TEST_CASE("trace records follow the step contract") {
    Setup u;
    const auto loss = make_edit_loss({all_specs()[1]}, small_skeleton());
    OptimizerConfig cfg;
    std::vector<int> seen;
    const auto tr = optimize_noise(u.x_T, u.x_T, u.eps, u.schedule(10), {}, cfg, loss,
                                   [&](const TraceRecord& r) { seen.push_back(r.s); });
    REQUIRE(tr.records.size() == 4);
    CHECK(seen == std::vector<int>{0, 1, 2, 3});
    CHECK(tr.records[0].relative_loss == 1.0);
    CHECK(tr.records[0].arm_divergence == 0.0);
    for (const auto& r : tr.records) CHECK(r.retained_steps == 2);
    for (std::size_t i = 1; i < tr.records.size(); ++i) {
      CHECK(tr.records[i].grad_inf_norm > 0.0);
      CHECK(tr.records[i].relative_loss ==
            doctest::Approx(tr.records[i].loss / tr.records[0].loss).epsilon(1e-12));
    }
    CHECK(tr.records.back().loss < tr.records.front().loss);
    CHECK(std::abs(ad::l2_norm(tr.x_T) - std::sqrt(72.0)) < 1e-12);
    CHECK(std::abs(ad::l2_norm(tr.y_T) - std::sqrt(72.0)) < 1e-12);
    CHECK_FALSE(tr.error.has_value());

    const auto jsonl = trace_to_jsonl(tr);
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 4);
    CHECK(jsonl.find("wall_ms") == std::string::npos);
    CHECK(trace_to_jsonl(tr, true).find("wall_ms") != std::string::npos);
    const auto first = Json::parse(jsonl.substr(0, jsonl.find('\n')));
    CHECK(first["s"] == 0);
    CHECK(first["relative_loss"] == 1.0);
    const auto csv = trace_to_csv(tr);
    CHECK(csv.rfind("s,loss,relative_loss,grad_inf_norm,retained_steps", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  }

  TEST_CASE("maximize directions report a falling relative loss") {
    Setup u;
    const auto loss = make_edit_loss({all_specs()[2]}, small_skeleton());
    const auto tr = optimize_noise(u.x_T, u.x_T, u.eps, u.schedule(10), {}, {}, loss);
    REQUIRE(tr.records.size() == 4);
    CHECK(tr.records[0].loss < 0.0);
    CHECK(tr.records[1].loss < tr.records[0].loss);
    CHECK(tr.records[1].relative_loss < 1.0);
  }

  TEST_CASE("optimization is deterministic and both gradient paths agree on the trajectory") {
    Setup u;
    const auto loss = make_edit_loss({all_specs()[3]}, small_skeleton());
    OptimizerConfig rec, full;
    full.grad_path = GradPath::kFullCache;
    const auto a = optimize_noise(u.x_T, u.x_T, u.eps, u.schedule(8), {}, rec, loss);
    const auto b = optimize_noise(u.x_T, u.x_T, u.eps, u.schedule(8), {}, rec, loss);
    const auto c = optimize_noise(u.x_T, u.x_T, u.eps, u.schedule(8), {}, full, loss);
    CHECK(trace_to_jsonl(a) == trace_to_jsonl(b));
    CHECK(values(a.x0) == values(b.x0));
    CHECK(ad::max_abs(a.x0 - c.x0) < 1e-8);
    CHECK(c.records[0].retained_steps == 8);
  }

  TEST_CASE("tied arms stay identical") {
    Setup u;
    const auto loss = make_edit_loss({all_specs()[0]}, small_skeleton());
    OptimizerConfig cfg;
    cfg.tie_arms = true;
    const auto tr = optimize_noise(u.x_T, u.x_T, u.eps, u.schedule(10), {}, cfg, loss);
    CHECK(values(tr.x_T) == values(tr.y_T));
    for (const auto& r : tr.records) CHECK(r.arm_divergence == 0.0);
  }

  TEST_CASE("early stop ends a plateaued run") {
    Setup u;
    const LossFn flat = [](const Tensor& x0) {
      return ad::scale(ad::sum(x0), 0.0) + Tensor::scalar(1.0);
    };
    OptimizerConfig cfg;
    cfg.steps = 10;
    cfg.early_stop = true;
    const auto tr = optimize_noise(u.x_T, u.x_T, u.eps, u.schedule(5), {}, cfg, flat);
    CHECK(tr.stopped_early);
    CHECK(tr.records.size() == 3);
    cfg.early_stop = false;
    CHECK(optimize_noise(u.x_T, u.x_T, u.eps, u.schedule(5), {}, cfg, flat).records.size() == 11);
  }

  TEST_CASE("non-finite values end the run with a partial trace") {
    Setup u;
    const auto s = u.schedule(5);
    int calls = 0;
    // Finite for the first gradient, infinite afterwards.
    const LossFn blows_up = [&calls](const Tensor& x0) {
      const double k = ++calls > 1 ? std::numeric_limits<double>::infinity() : 1.0;
      return ad::scale(ad::sum(ad::square(x0)), k);
    };
    OptimizerConfig cfg;
    cfg.grad_path = GradPath::kFullCache;
    const auto tr = optimize_noise(u.x_T, u.x_T, u.eps, s, {}, cfg, blows_up);
    CHECK(tr.records.size() == 1);
    REQUIRE(tr.error.has_value());
    CHECK(tr.error->find("non-finite") != std::string::npos);
  }

  TEST_CASE("configuration and input checks") {
    Setup u;
    const auto loss = make_edit_loss({all_specs()[1]}, small_skeleton());
    OptimizerConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.steps = 3;
    cfg.lr = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    Tensor bad = u.x_T.detach();
    bad.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(optimize_noise(bad, bad, u.eps, u.schedule(5), {}, {}, loss), std::invalid_argument);
    CHECK_THROWS_AS(optimize_noise(u.x_T, random_tensor({5, 4, 3}, 1), u.eps, u.schedule(5), {}, {}, loss),
                    ShapeError);
    CHECK_THROWS_AS(make_edit_loss({}, small_skeleton()), std::invalid_argument);
    CHECK(grad_path_from_string("full_cache") == GradPath::kFullCache);
    CHECK(grad_path_from_string(to_string(GradPath::kInversionRecompute)) == GradPath::kInversionRecompute);
    CHECK_THROWS_AS(grad_path_from_string("adjoint"), std::invalid_argument);
  }
}
