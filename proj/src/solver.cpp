#include "sdde/solver.hpp"

#include <cmath>

#include "sdde/errors.hpp"

namespace sdde {

void SolverConfig::validate() const {
  if (replicates < 1) throw ConfigError("replicate count N must be >= 1");
  if (!(drift_clip > 0.0)) throw ConfigError("drift clip threshold must be positive");
}

namespace {

void check_inputs(const ModelSpec& model, const PathSegment& x0, const TimeGrid& grid,
                  const std::vector<double>& increments) {
  model.validate();
  if (x0.dim() != model.dim) throw DomainError("initial segment dimension does not match the model");
  if (x0.size() != grid.n_pre() + 1 || std::abs(x0.step() - grid.step()) > 1e-12 * grid.step())
    throw DomainError("initial segment does not match the grid spacing");
  if (std::abs(model.delay - grid.delay()) > 1e-9 * model.delay)
    throw DomainError("grid delay does not match the model delay");
  if (increments.size() != grid.n_main() * model.dim) throw DomainError("increment count does not match the grid");
}

SamplePath integrate(const ModelSpec& model, const PathSegment& x0, const TimeGrid& grid,
                     std::vector<double> increments, double drift_clip, bool with_drift) {
  check_inputs(model, x0, grid, increments);
  const std::size_t d = model.dim;
  const double h = grid.step();
  const std::size_t n_pre = grid.n_pre();

  std::vector<double> states(grid.n_nodes() * d);
  std::copy(x0.values().begin(), x0.values().end(), states.begin());

  std::vector<double> drift(d, 0.0);
  Matrix sigma;
  const bool constant_sigma = model.diffusion.is_constant();
  if (constant_sigma) sigma = model.diffusion.constant_value();
  std::size_t clips = 0;
  const bool use_drift = with_drift && !model.drift.is_zero();

  for (std::size_t k = 0; k < grid.n_main(); ++k) {
    const std::size_t node = n_pre + k;
    const double t = grid.time(node);
    const double* x = states.data() + node * d;
    double* next = states.data() + (node + 1) * d;
    if (use_drift) {
      const SegmentView seg(std::span<const double>(states.data() + k * d, (n_pre + 1) * d), d, h);
      clips += model.drift.evaluate(t, seg, drift, drift_clip);
    }
    if (!constant_sigma) model.diffusion.evaluate(t, std::span<const double>(x, d), sigma);
    const double* dw = increments.data() + k * d;
    for (std::size_t i = 0; i < d; ++i) {
      double noise = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        noise += sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * dw[j];
      next[i] = x[i] + (use_drift ? drift[i] * h : 0.0) + noise;
      if (!std::isfinite(next[i])) throw IntegrationError("non-finite state in Euler-Maruyama step", k);
    }
  }
  SamplePath path(grid, d, std::move(states), std::move(increments));
  path.set_clip_events(clips);
  return path;
}

void check_driver(const ModelSpec& model, const SolverConfig& cfg, const BrownianDriver& driver) {
  if (!(driver.grid() == cfg.grid) || driver.dim() != model.dim)
    throw DomainError("Brownian driver grid or dimension does not match the solver configuration");
}

}  // namespace

SamplePath euler_maruyama(const ModelSpec& model, const PathSegment& x0, const TimeGrid& grid,
                          std::vector<double> increments, double drift_clip) {
  return integrate(model, x0, grid, std::move(increments), drift_clip, true);
}

SamplePath euler_maruyama(const ModelSpec& model, const PathSegment& x0, const SolverConfig& cfg,
                          const BrownianDriver& driver) {
  check_driver(model, cfg, driver);
  return euler_maruyama(model, x0, cfg.grid, driver.increments(), cfg.drift_clip);
}

SamplePath driftless_path(const ModelSpec& model, const PathSegment& x0, const TimeGrid& grid,
                          std::vector<double> increments) {
  return integrate(model, x0, grid, std::move(increments), kDefaultDriftClip, false);
}

SamplePath driftless_path(const ModelSpec& model, const PathSegment& x0, const SolverConfig& cfg,
                          const BrownianDriver& driver) {
  check_driver(model, cfg, driver);
  return driftless_path(model, x0, cfg.grid, driver.increments());
}

CoupledPair coupled_paths(const ModelSpec& model, const PathSegment& x0, const PathSegment& y0,
                          const SolverConfig& cfg, const BrownianDriver& driver) {
  check_driver(model, cfg, driver);
  auto increments = driver.increments();
  auto first = euler_maruyama(model, x0, cfg.grid, increments, cfg.drift_clip);
  auto second = euler_maruyama(model, y0, cfg.grid, std::move(increments), cfg.drift_clip);
  return {std::move(first), std::move(second)};
}

}  // namespace sdde
