#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "sdde/errors.hpp"
#include "sdde/girsanov.hpp"
#include "sdde/parallel.hpp"

using namespace sdde;

namespace {

ModelSpec constant_drift(double beta, double r = 1.0, double s = 1.0) { return linear_model(1, r, 0.0, {beta}, s); }

SegmentFunctional endpoint_value() {
  return {"endpoint", [](const SegmentView& seg) { return seg.latest()[0]; }, 1e6};
}

}  // namespace

TEST_CASE("zero drift gives unit weights") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 32);
  const auto model = constant_drift(0.0);
  const auto path = driftless_path(model, PathSegment::constant(g, {0.0}), g, BrownianDriver(1, 0, g, 1).increments());
  const auto w = girsanov_weight(model, path);
  CHECK(w.log_weight == 0.0);
  CHECK(w.quad_var == 0.0);
  CHECK_FALSE(w.flagged());
}

TEST_CASE("constant drift weight with W(T) = 0 is exp(-1/2)") {
  const auto g = TimeGrid::make(1.0, 1.0, 0.125);
  std::vector<double> inc{0.3, -0.1, 0.2, -0.4, 0.5, -0.5, 0.25, -0.25};
  const auto model = constant_drift(1.0);
  const auto path = driftless_path(model, PathSegment::constant(g, {0.0}), g, inc);
  const auto w = girsanov_weight(model, path);
  CHECK(w.log_weight == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(w.quad_var == doctest::Approx(1.0));
  REQUIRE(w.window_exponents.size() == 1);
  CHECK(w.window_exponents[0] == doctest::Approx(0.5));
}

TEST_CASE("sgn-delay weight from the zero segment is exp(W(1) - 1/2)") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 64);
  const auto model = sgn_delay_model();
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    const auto inc = BrownianDriver(8, rep, g, 1).increments();
    const double w1 = std::accumulate(inc.begin(), inc.end(), 0.0);
    const auto path = driftless_path(model, PathSegment::constant(g, {0.0}), g, inc);
    CHECK(girsanov_weight(model, path).log_weight == doctest::Approx(w1 - 0.5).epsilon(1e-12));
  }
}

TEST_CASE("window exponents split the half quadratic variation") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 16);
  const auto model = constant_drift(2.0);
  const auto path = driftless_path(model, PathSegment::constant(g, {0.0}), g, BrownianDriver(2, 0, g, 1).increments());
  const std::vector<double> bounds{0.0, 0.25, 1.0};
  const auto w = girsanov_weight(model, path, bounds);
  REQUIRE(w.window_exponents.size() == 2);
  CHECK(w.window_exponents[0] == doctest::Approx(0.5 * 4.0 * 0.25));
  CHECK(w.window_exponents[1] == doctest::Approx(0.5 * 4.0 * 0.75));
  const std::vector<double> off{0.0, 0.3, 1.0};
  CHECK_THROWS_AS(girsanov_weight(model, path, off), DomainError);
}

TEST_CASE("log weight is invariant under consistent coarsening for constant drift") {
  const auto fine = TimeGrid::make(1.0, 1.0, 1.0 / 64);
  const auto coarse = TimeGrid::make(1.0, 1.0, 1.0 / 32);
  const auto model = constant_drift(-0.7);
  const auto inc = BrownianDriver(3, 0, fine, 1).increments();
  std::vector<double> merged(coarse.n_main());
  for (std::size_t k = 0; k < merged.size(); ++k) merged[k] = inc[2 * k] + inc[2 * k + 1];
  const auto a = girsanov_weight(model, driftless_path(model, PathSegment::constant(fine, {0.0}), fine, inc));
  const auto b = girsanov_weight(model, driftless_path(model, PathSegment::constant(coarse, {0.0}), coarse, merged));
  CHECK(a.log_weight == doctest::Approx(b.log_weight).epsilon(1e-13));
}

TEST_CASE("singular diffusion raises a weight error with the step") {
  const auto g = TimeGrid::make(1.0, 1.0, 0.25);
  auto model = constant_drift(1.0);
  model.diffusion = DiffusionField::general(1, [](double t, std::span<const double>, Matrix& out) {
    out.resize(1, 1);
    out(0, 0) = t < 0.5 ? 1.0 : 0.0;
  });
  const auto path = driftless_path(constant_drift(0.0), PathSegment::constant(g, {0.0}), g,
                                   BrownianDriver(1, 0, g, 1).increments());
  try {
    (void)girsanov_weight(model, path);
    FAIL("expected a weight error");
  } catch (const WeightError& e) {
    CHECK(e.step() == 2);
  }
}

TEST_CASE("weights have mean one") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 64);
  SolverConfig cfg{g, 17, 20000};
  for (const auto& model :
       {sgn_delay_model(), constant_drift(0.5),
        kernel_model(1, 1.0, coordinatewise_kernel([](double x) { return std::tanh(x); }),
                     KernelMeasure{{{-1.0, 0.5}}, KernelMeasure::Density{-1.0, -0.5, 2.0}}, 1.0)}) {
    const auto r = weighted_expectation(model, PathSegment::constant(g, {0.2}), constant_one(), 1.0, cfg);
    CHECK(std::abs(r.estimate - 1.0) < 4 * r.std_error);
    CHECK(r.ess > 0.0);
    CHECK(r.ess <= static_cast<double>(r.n));
    CHECK(r.flagged == 0);
  }
}

TEST_CASE("zero drift reproduces plain Monte Carlo exactly") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 32);
  SolverConfig cfg{g, 5, 2000};
  const auto model = constant_drift(0.0);
  const auto x0 = PathSegment::constant(g, {0.3});
  const auto w = weighted_expectation(model, x0, tanh_endpoint(), 1.0, cfg);
  const auto d = direct_expectation(model, x0, tanh_endpoint(), 1.0, cfg);
  CHECK(w.estimate == d.estimate);
  CHECK(w.std_error == d.std_error);
  CHECK(w.ess == doctest::Approx(2000.0));
}

TEST_CASE("constant drift expectation matches x0 + beta t and the direct estimator") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 32);
  SolverConfig cfg{g, 23, 20000};
  const auto model = constant_drift(0.5);
  const auto x0 = PathSegment::constant(g, {0.25});
  const auto w = weighted_expectation(model, x0, endpoint_value(), 1.0, cfg);
  const auto d = direct_expectation(model, x0, endpoint_value(), 1.0, cfg);
  CHECK(std::abs(w.estimate - 0.75) < 4 * w.std_error);
  CHECK(std::abs(w.estimate - d.estimate) < 3 * std::hypot(w.std_error, d.std_error));
  const auto half = weighted_expectation(model, x0, endpoint_value(), 0.5, cfg);
  CHECK(std::abs(half.estimate - 0.5) < 4 * half.std_error);
}

TEST_CASE("smooth kernel model: weighted and direct estimators agree on the test battery") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 32);
  SolverConfig cfg{g, 31, 20000};
  const auto model = kernel_model(1, 1.0, coordinatewise_kernel([](double x) { return std::tanh(x); }),
                                  KernelMeasure{{{0.0, 0.5}}, KernelMeasure::Density{-1.0, -0.5, 2.0}}, 1.0);
  const auto x0 = PathSegment::from_function(g, 1, [](double s) { return std::vector<double>{0.5 + s}; });
  for (const auto& f : {tanh_endpoint(), smoothed_half_line(0, 0.2, 0.1), tanh_sup_norm()}) {
    const auto w = weighted_expectation(model, x0, f, 1.0, cfg);
    const auto d = direct_expectation(model, x0, f, 1.0, cfg);
    CHECK_MESSAGE(std::abs(w.estimate - d.estimate) < 3 * std::hypot(w.std_error, d.std_error), f.name);
  }
}

TEST_CASE("counterexample laws match the Gaussian oracle") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 64);
  SolverConfig cfg{g, 77, 40000};
  const auto model = sgn_delay_model();
  const auto a = weighted_expectation(model, PathSegment::constant(g, {0.0}), tanh_endpoint(), 1.0, cfg);
  const auto b = weighted_expectation(model, PathSegment::constant(g, {-0.25}), tanh_endpoint(), 1.0, cfg);
  CHECK(std::abs(a.estimate - oracle::expected_tanh(1.0)) < 3 * a.std_error);
  CHECK(std::abs(b.estimate - oracle::expected_tanh(-1.25)) < 3 * b.std_error);
}

TEST_CASE("exponential moments of integrable functionals are stable in N") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 64);
  const auto model = constant_drift(0.0);
  const auto run = [&](std::size_t n) {
    std::vector<double> v(n);
    parallel_for(n, 1, [&](std::size_t i) {
      const auto p = driftless_path(model, PathSegment::constant(g, {0.0}), g, BrownianDriver(9, i, g, 1).increments());
      double integral = 0.0;
      for (std::size_t k = 0; k < g.n_main(); ++k) {
        const double x = std::abs(p.state(g.n_pre() + k)[0]);
        // |x|^{-1/4} on |x| <= 1 is square integrable; the value at 0 is capped at the grid scale.
        if (x <= 1.0) integral += std::pow(std::max(x, 1e-6), -0.25) * g.step();
      }
      v[i] = std::exp(integral);
    });
    return sample_moments(v);
  };
  const auto small = run(2000);
  const auto large = run(16000);
  CHECK(std::isfinite(large.mean));
  CHECK(std::abs(small.mean - large.mean) < 5 * std::hypot(small.std_error, large.std_error));
}

TEST_CASE("estimator reports the seed, clips and flags") {
  const auto g = TimeGrid::make(1.0, 1.0, 0.25);
  SolverConfig cfg{g, 4, 50, 1.0};
  const auto model = pointwise_singular_model(1.0, 0.0, 0.4, 1.0, 1.0);
  CHECK_THROWS_AS(weighted_expectation(model, PathSegment::constant(g, {0.0}), constant_one(), 1.0, cfg),
                  EstimationError);
  CHECK_THROWS_AS(weighted_expectation(model, PathSegment::constant(g, {0.0}), constant_one(), 0.3, cfg),
                  DomainError);
  CHECK_THROWS_AS(weighted_expectation(model, PathSegment::constant(g, {0.0}), constant_one(), 2.0, cfg),
                  DomainError);

  SolverConfig ok{g, 4, 50};
  const auto r = weighted_expectation(constant_drift(0.1), PathSegment::constant(g, {0.0}), constant_one(), 1.0, ok);
  nlohmann::json j = r;
  for (const char* key : {"estimate", "stderr", "n", "ess", "flagged", "seed", "config_digest"}) CHECK(j.contains(key));
  CHECK(j["seed"] == 4);
  CHECK(j.size() == 7);
}

TEST_CASE("estimates do not depend on the worker count") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 32);
  const auto model = sgn_delay_model();
  const auto x0 = PathSegment::constant(g, {0.0});
  const auto one = weighted_expectation(model, x0, tanh_endpoint(), 1.0, SolverConfig{g, 6, 3000, kDefaultDriftClip, 1});
  const auto many = weighted_expectation(model, x0, tanh_endpoint(), 1.0, SolverConfig{g, 6, 3000, kDefaultDriftClip, 7});
  CHECK(one.estimate == many.estimate);
  CHECK(one.std_error == many.std_error);
  CHECK(one.ess == many.ess);
}

TEST_CASE("novikov partition examples") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 64);
  SolverConfig pilot{g, 1, 200};
  const auto x0 = PathSegment::constant(g, {0.0});
  CHECK(novikov_partition(constant_drift(0.0), x0, 2.0, pilot) == std::vector<double>{0.0, 1.0});
  CHECK(novikov_partition(sgn_delay_model(), x0, std::exp(1.0), pilot) == std::vector<double>{0.0, 1.0});

  // |a|^2 = c = 16: windows of length 2 ln(target) / c.
  const double target = 2.0;
  const auto parts = novikov_partition(constant_drift(4.0), x0, target, pilot);
  const double expected = 2.0 * std::log(target) / 16.0;
  REQUIRE(parts.size() >= 3);
  CHECK(parts.front() == 0.0);
  CHECK(parts.back() == 1.0);
  CHECK(std::abs((parts[1] - parts[0]) - expected) <= g.step());
  for (std::size_t i = 1; i + 1 < parts.size(); ++i)
    CHECK(std::abs((parts[i] - parts[i - 1]) - expected) <= g.step());

  CHECK_THROWS_AS(novikov_partition(constant_drift(100.0), x0, 1.01, pilot), NumericalError);
  CHECK_THROWS_AS(novikov_partition(constant_drift(1.0), x0, 1.0, pilot), DomainError);
}

TEST_CASE("effective sample size") {
  CHECK(ess(std::vector<double>{3.0, 3.0, 3.0, 3.0}) == doctest::Approx(4.0));
  CHECK(ess(std::vector<double>{1.0, 0.0, 0.0, 0.0}) == doctest::Approx(1.0));
  CHECK(ess(std::vector<double>{2.0, 1.0, 1.0}) == doctest::Approx(16.0 / 6.0));
  CHECK_THROWS_AS(ess(std::vector<double>{0.0, 0.0}), EstimationError);
  CHECK_THROWS_AS(ess(std::vector<double>{}), DomainError);
  CHECK_THROWS_AS(ess(std::vector<double>{1.0, -1.0}), DomainError);
  CHECK(ess_from_log_weights(std::vector<double>{800.0, 800.0, 800.0}) == doctest::Approx(3.0));
  CHECK(ess_from_log_weights(std::vector<double>{std::log(2.0), 0.0, 0.0}) == doctest::Approx(16.0 / 6.0));
}
