#include <cmath>

#include "doctest.h"
#include "sdde/errors.hpp"
#include "sdde/models.hpp"
#include "sdde/parallel.hpp"
#include "sdde/solver.hpp"

using namespace sdde;

namespace {

std::vector<double> ramp_increments(std::size_t n, double scale) {
  std::vector<double> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = scale * std::sin(1.0 + 0.7 * static_cast<double>(k));
  return v;
}

ModelSpec zero_model(std::size_t dim, double r, double s) { return linear_model(dim, r, 0.0, std::vector<double>(dim, 0.0), s); }

}  // namespace

TEST_CASE("zero drift with identity noise is a random walk") {
  const auto g = TimeGrid::make(1.0, 2.0, 0.125);
  const auto inc = ramp_increments(g.n_main(), 0.3);
  const auto x0 = PathSegment::from_function(g, 1, [](double s) { return std::vector<double>{s * s + 0.5}; });
  const auto p = euler_maruyama(zero_model(1, 1.0, 1.0), x0, g, inc);
  double acc = x0.state(g.n_pre())[0];
  for (std::size_t k = 0; k < g.n_main(); ++k) {
    acc += inc[k];
    CHECK(p.state(g.n_pre() + k + 1)[0] == doctest::Approx(acc).epsilon(1e-14));
  }
  for (std::size_t j = 0; j <= g.n_pre(); ++j) CHECK(p.state(j)[0] == x0.state(j)[0]);
  CHECK(p.increments() == inc);
}

TEST_CASE("sgn-delay model with zero noise hits the closed form exactly") {
  const auto g = TimeGrid::make(1.0, 1.0, 1.0 / 128);
  const auto model = sgn_delay_model();
  const std::vector<double> zero(g.n_main(), 0.0);
  const auto a = euler_maruyama(model, PathSegment::constant(g, {0.0}), g, zero);
  CHECK(a.state(g.n_nodes() - 1)[0] == 1.0);
  const auto b = euler_maruyama(model, PathSegment::constant(g, {-0.5}), g, zero);
  CHECK(b.state(g.n_nodes() - 1)[0] == -1.5);
}

TEST_CASE("driftless path ignores the drift and scales the noise") {
  const auto g = TimeGrid::make(0.5, 1.0, 0.125);
  const auto inc = ramp_increments(g.n_main(), 1.0);
  const auto x0 = PathSegment::constant(g, {2.0});
  const auto sgn_model = sgn_delay_model();
  const auto shifted_grid = TimeGrid::make(1.0, 1.0, 0.125);
  const auto bm = driftless_path(sgn_model, PathSegment::constant(shifted_grid, {2.0}), shifted_grid,
                                 ramp_increments(shifted_grid.n_main(), 1.0));
  double acc = 2.0;
  for (std::size_t k = 0; k < shifted_grid.n_main(); ++k) {
    acc += std::sin(1.0 + 0.7 * static_cast<double>(k));
    CHECK(bm.state(shifted_grid.n_pre() + k + 1)[0] == doctest::Approx(acc).epsilon(1e-14));
  }

  const auto half = driftless_path(linear_model(1, 0.5, 3.0, {1.0}, 0.5), x0, g, inc);
  acc = 2.0;
  for (std::size_t k = 0; k < g.n_main(); ++k) {
    acc += 0.5 * inc[k];
    CHECK(half.state(g.n_pre() + k + 1)[0] == doctest::Approx(acc).epsilon(1e-14));
  }
  for (std::size_t j = 0; j <= g.n_pre(); ++j) CHECK(half.state(j)[0] == 2.0);
}

TEST_CASE("coupled paths share their increments") {
  const auto g = TimeGrid::make(1.0, 2.0, 1.0 / 16);
  SolverConfig cfg{g, 11, 1};
  const BrownianDriver driver(11, 0, g, 1);
  const auto model = kernel_model(1, 1.0, coordinatewise_kernel([](double x) { return std::tanh(x); }),
                                  KernelMeasure{{}, KernelMeasure::Density{-1.0, -0.5, 2.0}}, 1.0);
  const auto x = PathSegment::constant(g, {0.1});
  const auto same = coupled_paths(model, x, x, cfg, driver);
  CHECK(same.first.states() == same.second.states());
  CHECK(same.first.increments() == same.second.increments());

  const auto y = PathSegment::from_function(g, 1, [](double s) { return std::vector<double>{-0.4 + s}; });
  const auto diff = coupled_paths(zero_model(1, 1.0, 1.0), x, y, cfg, driver);
  for (std::size_t node = g.n_pre(); node < g.n_nodes(); ++node)
    CHECK(diff.first.state(node)[0] - diff.second.state(node)[0] == doctest::Approx(0.1 - (-0.4)).epsilon(1e-12));

  CHECK_THROWS_AS(coupled_paths(model, x, y, cfg, BrownianDriver(11, 0, TimeGrid::make(1.0, 1.0, 1.0 / 16), 1)),
                  DomainError);
}

TEST_CASE("linear drift difference follows (1 - h)^k without noise") {
  const double h = 0.05;
  const auto g = TimeGrid::make(1.0, 1.0, h);
  const auto model = linear_model(1, 1.0, -1.0, {0.0}, 1.0);
  const std::vector<double> zero(g.n_main(), 0.0);
  const auto a = euler_maruyama(model, PathSegment::constant(g, {1.0}), g, zero);
  const auto b = euler_maruyama(model, PathSegment::constant(g, {0.0}), g, zero);
  for (std::size_t k = 0; k <= g.n_main(); ++k)
    CHECK(a.state(g.n_pre() + k)[0] - b.state(g.n_pre() + k)[0] ==
          doctest::Approx(std::pow(1.0 - h, static_cast<double>(k))).epsilon(1e-13));
}

TEST_CASE("additive noise cancels in the coupled difference") {
  const auto g = TimeGrid::make(0.5, 1.0, 1.0 / 32);
  const double a = 0.7;
  const auto model = linear_model(1, 0.5, a, {0.3}, 1.5);
  const auto x = PathSegment::constant(g, {1.2});
  const auto y = PathSegment::constant(g, {-0.4});
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    const auto pair = coupled_paths(model, x, y, SolverConfig{g, 3, 1}, BrownianDriver(3, rep, g, 1));
    double expected = 1.6;
    for (std::size_t k = 0; k <= g.n_main(); ++k) {
      const std::size_t node = g.n_pre() + k;
      CHECK(pair.first.state(node)[0] - pair.second.state(node)[0] == doctest::Approx(expected).epsilon(1e-12));
      expected *= 1.0 + a * g.step();
    }
  }
}

TEST_CASE("mean of the linear model matches the closed form up to O(h) and MC error") {
  const double a = -0.8;
  const double T = 1.0;
  const double x0 = 1.5;
  for (double h : {1.0 / 16, 1.0 / 64}) {
    const auto g = TimeGrid::make(1.0, T, h);
    const auto model = linear_model(1, 1.0, a, {0.0}, 0.6);
    const std::size_t n = 20000;
    std::vector<double> ends(n);
    parallel_for(n, 1, [&](std::size_t i) {
      const auto p = euler_maruyama(model, PathSegment::constant(g, {x0}), g, BrownianDriver(21, i, g, 1).increments());
      ends[i] = p.state(g.n_nodes() - 1)[0];
    });
    const auto m = sample_moments(ends);
    const double scheme_mean = x0 * std::pow(1.0 + a * h, static_cast<double>(g.n_main()));
    CHECK(std::abs(m.mean - scheme_mean) < 4 * m.std_error);
    const double exact = x0 * std::exp(a * T);
    // EM bias of the mean is x0 e^{aT} a^2 T h / 2 to leading order.
    CHECK(std::abs(scheme_mean - exact) < x0 * a * a * T * h);
  }
}

TEST_CASE("second moment of the running sup grows at most quadratically in the initial norm") {
  const auto g = TimeGrid::make(1.0, 2.0, 1.0 / 32);
  const auto model = sgn_delay_model(2.0);
  const auto fitted = [&](std::size_t n) {
    double c = 0.0;
    for (double level : {0.0, 1.0, 2.0, 4.0, 8.0}) {
      std::vector<double> sups(n);
      parallel_for(n, 1, [&](std::size_t i) {
        const auto p = euler_maruyama(model, PathSegment::constant(g, {level}), g,
                                      BrownianDriver(4, i, g, 1).increments());
        double s = 0.0;
        for (std::size_t j = 0; j < g.n_nodes(); ++j) s = std::max(s, p.state(j)[0] * p.state(j)[0]);
        sups[i] = s;
      });
      c = std::max(c, sample_moments(sups).mean / (1.0 + level * level));
    }
    return c;
  };
  const double small = fitted(1000);
  const double large = fitted(8000);
  CHECK(small < 20.0);
  CHECK(std::abs(small - large) < 0.2 * large);
}

TEST_CASE("non-finite states raise an integration error with the step index") {
  const auto g = TimeGrid::make(0.5, 2.0, 0.5);
  ModelSpec m;
  m.name = "explosive";
  m.dim = 1;
  m.delay = 0.5;
  m.drift = DriftFunctional::functional(1, [](double, const SegmentView& seg, std::span<double> out) {
    out[0] = 1e300 * seg.latest()[0];
  });
  try {
    (void)euler_maruyama(m, PathSegment::constant(g, {1.0}), g, std::vector<double>(g.n_main(), 0.0));
    FAIL("expected an integration error");
  } catch (const IntegrationError& e) {
    CHECK(e.step() == 1);
  }
}

TEST_CASE("solver rejects mismatched inputs") {
  const auto g = TimeGrid::make(1.0, 1.0, 0.25);
  const auto model = sgn_delay_model();
  const std::vector<double> inc(g.n_main(), 0.0);
  CHECK_THROWS_AS(euler_maruyama(model, PathSegment::constant(TimeGrid::make(0.5, 1.0, 0.25), {0.0}), g, inc),
                  DomainError);
  CHECK_THROWS_AS(euler_maruyama(model, PathSegment::constant(g, {0.0, 1.0}), g, inc), DomainError);
  CHECK_THROWS_AS(euler_maruyama(model, PathSegment::constant(g, {0.0}), g, std::vector<double>(3, 0.0)), DomainError);
  CHECK_THROWS_AS(euler_maruyama(model, PathSegment::constant(TimeGrid::make(2.0, 1.0, 0.25), {0.0}),
                                 TimeGrid::make(2.0, 1.0, 0.25), inc),
                  DomainError);
  SolverConfig bad{g, 0, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("clip events are counted on the path") {
  const auto g = TimeGrid::make(1.0, 1.0, 0.25);
  const auto model = pointwise_singular_model(1.0, 0.0, 0.3, 1.0, 1.0);
  const auto p = euler_maruyama(model, PathSegment::constant(g, {0.0}), g, std::vector<double>(g.n_main(), 0.0), 10.0);
  CHECK(p.clip_events() >= 1);
  const auto q = euler_maruyama(model, PathSegment::constant(g, {1.0}), g, std::vector<double>(g.n_main(), 0.0));
  CHECK(q.clip_events() == 0);
}
