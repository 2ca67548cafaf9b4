#include "sdde/girsanov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sdde/errors.hpp"
#include "sdde/parallel.hpp"
#include "sdde/rng.hpp"

namespace sdde {

SegmentFunctional constant_one() {
  return {"one", [](const SegmentView&) { return 1.0; }, 1.0};
}

SegmentFunctional tanh_endpoint(std::size_t coord) {
  return {"tanh_endpoint", [coord](const SegmentView& seg) { return std::tanh(seg.latest()[coord]); }, 1.0};
}

SegmentFunctional smoothed_half_line(std::size_t coord, double threshold, double scale) {
  return {"smoothed_half_line",
          [=](const SegmentView& seg) { return 0.5 * (1.0 + std::tanh((seg.latest()[coord] - threshold) / scale)); },
          1.0};
}

SegmentFunctional tanh_sup_norm() {
  return {"tanh_sup_norm", [](const SegmentView& seg) { return std::tanh(sup_norm(seg)); }, 1.0};
}

namespace {

// Solves sigma a = b for one step; throws WeightError on a singular sigma.
class DriftWhitener {
 public:
  explicit DriftWhitener(const ModelSpec& model) : model_(model), d_(model.dim) {
    if (model.diffusion.is_constant()) {
      sigma_ = model.diffusion.constant_value();
      factorize(0);
      constant_ = true;
    }
  }

  void solve(double t, std::span<const double> x, std::span<const double> b, std::span<double> a, std::size_t step) {
    if (!constant_) {
      model_.diffusion.evaluate(t, x, sigma_);
      factorize(step);
    }
    if (d_ == 1) {
      a[0] = b[0] / scalar_;
      return;
    }
    const Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(d_));
    Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(d_)) = lu_.solve(rhs);
  }

 private:
  void factorize(std::size_t step) {
    if (!sigma_.allFinite()) throw WeightError("non-finite diffusion matrix", step);
    if (d_ == 1) {
      scalar_ = sigma_(0, 0);
      if (scalar_ == 0.0) throw WeightError("singular diffusion coefficient", step);
      return;
    }
    lu_.compute(sigma_);
    const double rcond = lu_.rcond();
    if (!(rcond * kSingularCondition >= 1.0)) throw WeightError("numerically singular diffusion matrix", step);
  }

  const ModelSpec& model_;
  std::size_t d_;
  Matrix sigma_;
  Eigen::PartialPivLU<Matrix> lu_;
  double scalar_ = 1.0;
  bool constant_ = false;
};

struct WeightTerms {
  double log_weight = 0.0;
  double quad_var = 0.0;
  std::vector<double> window_exponents;
  std::size_t clip_events = 0;
};

// Per-step a_k and |a_k|^2 h pieces; window_steps are step indices 0 = s_0 < ... < s_n.
WeightTerms weight_terms(const ModelSpec& model, const SamplePath& path, std::span<const std::size_t> window_steps,
                         std::size_t steps, double drift_clip, std::vector<double>* per_step = nullptr) {
  const auto& grid = path.grid();
  const std::size_t d = model.dim;
  const double h = grid.step();
  WeightTerms out;
  out.window_exponents.assign(window_steps.size() > 1 ? window_steps.size() - 1 : 1, 0.0);
  if (per_step) per_step->assign(steps, 0.0);
  if (model.drift.is_zero()) return out;

  DriftWhitener whitener(model);
  std::vector<double> b(d);
  std::vector<double> a(d);
  std::vector<double> stochastic(steps);
  std::vector<double> quadratic(steps);
  std::size_t window = 0;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t node = grid.n_pre() + k;
    const double t = grid.time(node);
    out.clip_events += model.drift.evaluate(t, path.segment_view(node), b, drift_clip);
    whitener.solve(t, path.state(node), b, a, k);
    const auto dw = path.increment(k);
    double dot = 0.0;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      dot += a[i] * dw[i];
      norm2 += a[i] * a[i];
    }
    stochastic[k] = dot;
    quadratic[k] = norm2 * h;
    if (per_step) (*per_step)[k] = 0.5 * norm2 * h;
    while (window + 1 < window_steps.size() - 1 && k >= window_steps[window + 1]) ++window;
    out.window_exponents[window] += 0.5 * norm2 * h;
  }
  out.quad_var = pairwise_sum(quadratic);
  out.log_weight = pairwise_sum(stochastic) - 0.5 * out.quad_var;
  return out;
}

std::vector<std::size_t> window_steps_for(const TimeGrid& grid, std::span<const double> bounds, std::size_t steps) {
  std::vector<std::size_t> out;
  if (bounds.empty()) return {0, steps};
  for (double t : bounds) {
    const auto k = whole_steps(t, grid.step());
    if (!k) throw DomainError("window boundary " + format_double(t) + " is not on the grid");
    out.push_back(std::min(*k, steps));
  }
  if (out.front() != 0 || !std::is_sorted(out.begin(), out.end()))
    throw DomainError("window boundaries must start at 0 and increase");
  return out;
}

void check_estimation_time(const SolverConfig& cfg, double t) {
  cfg.validate();
  if (!(t > 0.0) || !whole_steps(t, cfg.grid.step()) || t > cfg.grid.horizon() * (1 + 1e-12))
    throw DomainError("estimation time " + format_double(t) + " must be a positive grid time <= T");
}

}  // namespace

WeightedSample girsanov_weight(const ModelSpec& model, SamplePath path, std::span<const double> window_bounds,
                               std::optional<std::size_t> steps, double drift_clip) {
  if (path.dim() != model.dim) throw DomainError("path dimension does not match the model");
  const std::size_t n_steps = std::min(steps.value_or(path.grid().n_main()), path.grid().n_main());
  const auto windows = window_steps_for(path.grid(), window_bounds, n_steps);
  auto terms = weight_terms(model, path, windows, n_steps, drift_clip);
  WeightedSample out{std::move(path), terms.log_weight, terms.quad_var, std::move(terms.window_exponents),
                     terms.clip_events};
  return out;
}

void to_json(nlohmann::json& j, const EstimatorReport& r) {
  j = nlohmann::json{{"estimate", r.estimate}, {"stderr", r.std_error}, {"n", r.n},
                     {"ess", r.ess},           {"flagged", r.flagged},    {"seed", r.seed},
                     {"config_digest", r.config_digest}};
}

EstimatorReport weighted_expectation(const ModelSpec& model, const PathSegment& x0, const SegmentFunctional& f,
                                     double t, const SolverConfig& cfg) {
  check_estimation_time(cfg, t);
  const TimeGrid grid = cfg.grid.with_horizon(t);
  const std::size_t n = cfg.replicates;

  struct Term {
    double log_weight = 0.0;
    double value = 0.0;
    bool flagged = false;
  };
  std::vector<Term> terms(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const BrownianDriver driver(cfg.seed, i, grid, model.dim);
    const auto path = driftless_path(model, x0, grid, driver.increments());
    const std::size_t steps = grid.n_main();
    const std::size_t windows[] = {0, steps};
    const auto w = weight_terms(model, path, windows, steps, cfg.drift_clip);
    double value = f.fn(path.segment_view(grid.n_nodes() - 1));
    bool flagged = w.clip_events > 0;
    if (std::abs(value) > f.bound) {
      value = std::clamp(value, -f.bound, f.bound);
      flagged = true;
    }
    terms[i] = {w.log_weight, value, flagged};
  });

  EstimatorReport report;
  report.seed = cfg.seed;
  std::vector<double> products;
  std::vector<double> log_weights;
  products.reserve(n);
  log_weights.reserve(n);
  for (const auto& term : terms) {
    const double weight = std::exp(term.log_weight);
    if (!std::isfinite(weight) || !std::isfinite(term.log_weight)) {
      ++report.flagged;
      continue;
    }
    if (term.flagged) ++report.flagged;
    products.push_back(weight * term.value);
    log_weights.push_back(term.log_weight);
  }
  if (report.flagged == n || products.empty()) throw EstimationError("every sample path was flagged");
  const auto moments = sample_moments(products);
  report.estimate = moments.mean;
  report.std_error = moments.std_error;
  report.n = products.size();
  report.ess = ess_from_log_weights(log_weights);
  return report;
}

EstimatorReport direct_expectation(const ModelSpec& model, const PathSegment& x0, const SegmentFunctional& f,
                                   double t, const SolverConfig& cfg) {
  check_estimation_time(cfg, t);
  const TimeGrid grid = cfg.grid.with_horizon(t);
  const std::size_t n = cfg.replicates;
  std::vector<double> values(n);
  std::vector<unsigned char> flagged(n, 0);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const BrownianDriver driver(cfg.seed, i, grid, model.dim);
    const auto path = euler_maruyama(model, x0, grid, driver.increments(), cfg.drift_clip);
    double value = f.fn(path.segment_view(grid.n_nodes() - 1));
    bool flag = path.clip_events() > 0;
    if (std::abs(value) > f.bound) {
      value = std::clamp(value, -f.bound, f.bound);
      flag = true;
    }
    values[i] = value;
    flagged[i] = flag ? 1 : 0;
  });
  EstimatorReport report;
  report.seed = cfg.seed;
  report.flagged = static_cast<std::size_t>(std::count(flagged.begin(), flagged.end(), 1));
  if (report.flagged == n) throw EstimationError("every sample path was flagged");
  const auto moments = sample_moments(values);
  report.estimate = moments.mean;
  report.std_error = moments.std_error;
  report.n = n;
  report.ess = static_cast<double>(n);
  return report;
}

std::vector<double> novikov_partition(const ModelSpec& model, const PathSegment& x0, double target,
                                      const SolverConfig& pilot_cfg) {
  if (!(target > 1.0)) throw DomainError("Novikov target must exceed 1");
  pilot_cfg.validate();
  const auto& grid = pilot_cfg.grid;
  const std::size_t steps = grid.n_main();
  const std::size_t n = pilot_cfg.replicates;
  if (steps == 0) return {0.0};
  if (model.drift.is_zero()) return {0.0, grid.horizon()};

  // Half squared-drift increments, one row per pilot path.
  std::vector<std::vector<double>> pieces(n);
  parallel_for(n, pilot_cfg.workers, [&](std::size_t i) {
    const BrownianDriver driver(mix_seed(pilot_cfg.seed, 1), i, grid, model.dim);
    const auto path = driftless_path(model, x0, grid, driver.increments());
    const std::size_t windows[] = {0, steps};
    weight_terms(model, path, windows, steps, pilot_cfg.drift_clip, &pieces[i]);
  });

  std::vector<double> bounds{0.0};
  std::vector<double> running(n, 0.0);
  std::vector<double> trial(n);
  std::size_t start = 0;
  std::size_t end = 0;
  while (end < steps) {
    for (std::size_t i = 0; i < n; ++i) trial[i] = std::exp(running[i] + pieces[i][end]);
    const double mean = pairwise_sum(trial) / static_cast<double>(n);
    if (mean <= target) {
      for (std::size_t i = 0; i < n; ++i) running[i] += pieces[i][end];
      ++end;
      continue;
    }
    if (end == start)
      throw NumericalError("a single step exceeds the Novikov target at t=" + format_double(grid.time(grid.n_pre() + end)));
    bounds.push_back(static_cast<double>(end) * grid.step());
    start = end;
    std::fill(running.begin(), running.end(), 0.0);
  }
  bounds.push_back(grid.horizon());
  return bounds;
}

double ess(std::span<const double> weights) {
  if (weights.empty()) throw DomainError("ess needs at least one weight");
  if (std::any_of(weights.begin(), weights.end(), [](double w) { return !(w >= 0.0) || !std::isfinite(w); }))
    throw DomainError("ess needs finite nonnegative weights");
  std::vector<double> sq(weights.size());
  std::transform(weights.begin(), weights.end(), sq.begin(), [](double w) { return w * w; });
  const double sum = pairwise_sum(weights);
  if (sum == 0.0) throw EstimationError("all weights are zero");
  return sum * sum / pairwise_sum(sq);
}

double ess_from_log_weights(std::span<const double> log_weights) {
  if (log_weights.empty()) throw DomainError("ess needs at least one weight");
  const double top = *std::max_element(log_weights.begin(), log_weights.end());
  std::vector<double> w(log_weights.size());
  std::transform(log_weights.begin(), log_weights.end(), w.begin(), [top](double lw) { return std::exp(lw - top); });
  return ess(w);
}

}  // namespace sdde
