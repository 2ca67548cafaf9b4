#include "sdde/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>

#include "sdde/errors.hpp"
#include "sdde/parallel.hpp"
#include "sdde/rng.hpp"

namespace sdde {

namespace {

double segment_distance(const PathSegment& a, const PathSegment& b) {
  if (a.dim() != b.dim() || a.size() != b.size()) throw DomainError("segments live on different grids");
  double out = 0.0;
  std::vector<double> diff(a.dim());
  for (std::size_t j = 0; j < a.size(); ++j) {
    for (std::size_t c = 0; c < a.dim(); ++c) diff[c] = a.state(j)[c] - b.state(j)[c];
    out = std::max(out, euclidean_norm(diff));
  }
  return out;
}

void check_probe_inputs(const ModelSpec& model, const PathSegment& x, std::span<const PathSegment> ys, double t,
                        const SolverConfig& cfg) {
  cfg.validate();
  if (ys.empty()) throw DomainError("probe needs at least one perturbed initial segment");
  if (x.dim() != model.dim) throw DomainError("initial segment dimension does not match the model");
  if (x.size() != cfg.grid.n_pre() + 1) throw DomainError("initial segment does not match the grid");
  for (const auto& y : ys)
    if (y.dim() != x.dim() || y.size() != x.size()) throw DomainError("perturbed segment does not match x");
  if (!(t > 0.0) || !whole_steps(t, cfg.grid.step()) || t > cfg.grid.horizon() * (1 + 1e-12))
    throw DomainError("probe time " + format_double(t) + " must be a positive grid time <= T");
}

bool significant_increase(std::span<const double> values, std::span<const double> stderrs, double sigmas) {
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double s = std::hypot(stderrs[i - 1], stderrs[i]);
    if (values[i] - values[i - 1] > sigmas * s) return true;
  }
  return false;
}

struct LineFit {
  double intercept = 0.0;
  double intercept_stderr = 0.0;
};

// Weighted least squares for y = a + b u with independent errors s_i.
LineFit weighted_line(std::span<const double> u, std::span<const double> y, std::span<const double> s) {
  double scale = 0.0;
  for (double v : y) scale = std::max(scale, std::abs(v));
  const double floor = std::max(1e-9 * scale, 1e-300);
  double sw = 0, su = 0, suu = 0, sy = 0, suy = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double si = std::max(s[i], floor);
    const double w = 1.0 / (si * si);
    sw += w;
    su += w * u[i];
    suu += w * u[i] * u[i];
    sy += w * y[i];
    suy += w * u[i] * y[i];
  }
  const double det = sw * suu - su * su;
  if (!(det > 0.0)) throw NumericalError("probe distances do not determine a fit");
  LineFit fit;
  fit.intercept = (suu * sy - su * suy) / det;
  const double slope = (sw * suy - su * sy) / det;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double si = std::max(s[i], floor);
    const double r = (y[i] - fit.intercept - slope * u[i]) / si;
    chi2 += r * r;
  }
  double inflation = 1.0;
  if (u.size() > 2) inflation = std::max(1.0, std::sqrt(chi2 / static_cast<double>(u.size() - 2)));
  fit.intercept_stderr = std::sqrt(suu / det) * inflation;
  return fit;
}

}  // namespace

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kContinuous:
      return "continuous";
    case Verdict::kStable:
      return "stable";
    case Verdict::kGapDetected:
      return "gap-detected";
    case Verdict::kInconclusive:
      return "inconclusive";
  }
  return "inconclusive";
}

Verdict decide(std::span<const double> gaps, std::span<const double> stderrs, Verdict vanishing) {
  if (gaps.empty() || gaps.size() != stderrs.size()) throw DomainError("gap and stderr sequences must match");
  const double last = gaps.back();
  const double s = stderrs.back();
  if (std::abs(last) <= kPassSigmas * s && !significant_increase(gaps, stderrs, kPassSigmas)) return vanishing;
  if (last > 0.0 && last >= kGapSigmas * s) return Verdict::kGapDetected;
  return Verdict::kInconclusive;
}

void to_json(nlohmann::json& j, const ProbeReport& r) {
  nlohmann::json points = nlohmann::json::array();
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const auto& p = r.points[i];
    points.push_back({{"index", i},
                      {"distance", p.distance},
                      {"estimate", p.estimate},
                      {"stderr", p.std_error},
                      {"gap", p.gap},
                      {"gap_stderr", p.gap_stderr}});
  }
  j = nlohmann::json{{"kind", r.kind},
                     {"t", r.t},
                     {"reference_estimate", r.reference_estimate},
                     {"reference_stderr", r.reference_stderr},
                     {"points", points},
                     {"before_delay", r.before_delay},
                     {"verdict", to_string(r.verdict)},
                     {"pass_sigmas", r.pass_sigmas},
                     {"gap_sigmas", r.gap_sigmas},
                     {"seed", r.seed},
                     {"config_digest", r.config_digest}};
  if (r.limit) j["limit"] = *r.limit;
  if (r.limit_stderr) j["limit_stderr"] = *r.limit_stderr;
}

void write_probe_csv(std::ostream& os, const ProbeReport& r) {
  os << "probe,distance,estimate,stderr\n";
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const auto& p = r.points[i];
    os << i << ',' << format_double(p.distance) << ',' << format_double(p.estimate) << ','
       << format_double(p.std_error) << '\n';
  }
}

ProbeReport strong_feller_probe(const ModelSpec& model, const SegmentFunctional& f, const PathSegment& x,
                                std::span<const PathSegment> ys, double t, const SolverConfig& cfg,
                                EstimatorKind estimator) {
  check_probe_inputs(model, x, ys, t, cfg);
  const auto estimate = [&](const PathSegment& start) {
    return estimator == EstimatorKind::kGirsanov ? weighted_expectation(model, start, f, t, cfg)
                                                 : direct_expectation(model, start, f, t, cfg);
  };
  ProbeReport report;
  report.kind = "strong-feller";
  report.t = t;
  report.seed = cfg.seed;
  report.before_delay = t <= cfg.grid.delay() * (1 + 1e-12);
  const auto ref = estimate(x);
  report.reference_estimate = ref.estimate;
  report.reference_stderr = ref.std_error;
  std::vector<double> gaps;
  std::vector<double> stderrs;
  for (const auto& y : ys) {
    const auto est = estimate(y);
    ProbePoint p;
    p.distance = segment_distance(y, x);
    p.estimate = est.estimate;
    p.std_error = est.std_error;
    p.gap = std::abs(est.estimate - ref.estimate);
    p.gap_stderr = std::hypot(est.std_error, ref.std_error);
    gaps.push_back(p.gap);
    stderrs.push_back(p.gap_stderr);
    report.points.push_back(p);
  }
  report.verdict = decide(gaps, stderrs, Verdict::kContinuous);
  return report;
}

ProbeReport stability_probe(const ModelSpec& model, const PathSegment& x, std::span<const PathSegment> ys, double t,
                            double gamma, const SolverConfig& cfg) {
  check_probe_inputs(model, x, ys, t, cfg);
  if (!(gamma > 0.0 && gamma < 2.0)) throw DomainError("stability exponent must lie in (0, 2)");
  const TimeGrid grid = cfg.grid.with_horizon(t);
  const std::size_t n = cfg.replicates;
  const std::size_t m = ys.size();
  const std::size_t dim = model.dim;
  const std::size_t last = grid.n_nodes() - 1;
  const std::size_t first = last - grid.n_pre();

  // samples[n_y * n + i]: ||X_t^y - X_t^x||_inf^gamma on replicate i.
  std::vector<double> samples(m * n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const BrownianDriver driver(cfg.seed, i, grid, dim);
    const auto increments = driver.increments();
    const auto base = euler_maruyama(model, x, grid, increments, cfg.drift_clip);
    std::vector<double> diff(dim);
    for (std::size_t k = 0; k < m; ++k) {
      const auto other = euler_maruyama(model, ys[k], grid, increments, cfg.drift_clip);
      double sup = 0.0;
      for (std::size_t node = first; node <= last; ++node) {
        for (std::size_t c = 0; c < dim; ++c) diff[c] = other.state(node)[c] - base.state(node)[c];
        sup = std::max(sup, euclidean_norm(diff));
      }
      samples[k * n + i] = std::pow(sup, gamma);
    }
  });

  ProbeReport report;
  report.kind = "stability";
  report.t = t;
  report.seed = cfg.seed;
  report.before_delay = t <= cfg.grid.delay() * (1 + 1e-12);
  std::vector<double> estimates;
  std::vector<double> stderrs;
  std::vector<double> scaled;
  for (std::size_t k = 0; k < m; ++k) {
    const auto moments = sample_moments(std::span<const double>(samples).subspan(k * n, n));
    ProbePoint p;
    p.distance = segment_distance(ys[k], x);
    p.estimate = moments.mean;
    p.std_error = moments.std_error;
    p.gap = moments.mean;
    p.gap_stderr = moments.std_error;
    estimates.push_back(p.estimate);
    stderrs.push_back(p.std_error);
    scaled.push_back(std::pow(p.distance, gamma));
    report.points.push_back(p);
  }

  double limit = estimates.back();
  double limit_stderr = stderrs.back();
  const bool spread = std::adjacent_find(scaled.begin(), scaled.end(), std::not_equal_to<>()) != scaled.end();
  if (m >= 2 && spread) {
    const auto fit = weighted_line(scaled, estimates, stderrs);
    limit = fit.intercept;
    limit_stderr = fit.intercept_stderr;
  }
  report.limit = limit;
  report.limit_stderr = limit_stderr;

  const bool increase = significant_increase(estimates, stderrs, kPassSigmas);
  if (std::abs(limit) <= kPassSigmas * limit_stderr && !increase)
    report.verdict = Verdict::kStable;
  else if (limit > 0.0 && limit >= kGapSigmas * limit_stderr)
    report.verdict = Verdict::kGapDetected;
  else
    report.verdict = Verdict::kInconclusive;
  return report;
}

void to_json(nlohmann::json& j, const BoundReport& r) {
  j = nlohmann::json{{"name", r.name}, {"lhs", r.lhs},       {"lhs_stderr", r.lhs_stderr},
                     {"rhs", r.rhs},   {"ratio", r.ratio},   {"n", r.n},
                     {"passed", r.passed}, {"seed", r.seed}, {"config_digest", r.config_digest}};
}

double exp_sup_bound(double alpha, std::size_t dim, double c_sigma, double horizon, double x0_norm) {
  const double q = 1.0 - 2.0 * alpha * static_cast<double>(dim) * c_sigma * horizon;
  if (!(alpha >= 0.0) || !(q > 0.0)) throw DomainError("alpha must satisfy 0 <= alpha < 1/(2 d C_sigma T)");
  return 4.0 / std::sqrt(q) * std::exp(alpha / q * x0_norm * x0_norm);
}

BoundReport exp_sup_bound_check(const ModelSpec& model, const PathSegment& x0, double alpha, const SolverConfig& cfg) {
  cfg.validate();
  const auto& grid = cfg.grid;
  const double x0_norm = euclidean_norm(x0.view().latest());
  const double rhs = exp_sup_bound(alpha, model.dim, model.c_sigma, grid.horizon(), x0_norm);
  const std::size_t n = cfg.replicates;
  std::vector<double> values(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const BrownianDriver driver(cfg.seed, i, grid, model.dim);
    const auto path = driftless_path(model, x0, grid, driver.increments());
    double sup = 0.0;
    for (std::size_t node = grid.n_pre(); node < grid.n_nodes(); ++node)
      sup = std::max(sup, euclidean_norm(path.state(node)));
    values[i] = std::exp(alpha * sup * sup);
  });
  const auto moments = sample_moments(values);
  BoundReport report;
  report.name = "exp-sup";
  report.lhs = moments.mean;
  report.lhs_stderr = moments.std_error;
  report.rhs = rhs;
  report.ratio = moments.mean / rhs;
  report.n = n;
  report.passed = moments.mean <= rhs;
  report.seed = cfg.seed;
  return report;
}

double lp_norm(const SpaceTimeFunction& f, double p, std::size_t dim, const TimeGrid& grid, const QuadratureBox& box) {
  if (!(p >= 1.0)) throw DomainError("L^p norm needs p >= 1");
  if (!(box.half_width > 0.0) || !(box.dx > 0.0)) throw DomainError("quadrature box must have positive size");
  const auto cells = whole_steps(2.0 * box.half_width, box.dx);
  if (!cells || *cells == 0) throw DomainError("box width must be a multiple of dx");
  const std::size_t nx = *cells + 1;
  std::size_t total = 1;
  for (std::size_t c = 0; c < dim; ++c) total *= nx;

  // Space integral at each time node, then trapezoid in time.
  std::vector<double> slices(grid.n_main() + 1);
  std::vector<double> point(dim);
  std::vector<double> terms(total);
  for (std::size_t k = 0; k <= grid.n_main(); ++k) {
    const double t = grid.step() * static_cast<double>(k);
    for (std::size_t flat = 0; flat < total; ++flat) {
      std::size_t rest = flat;
      double weight = 1.0;
      for (std::size_t c = 0; c < dim; ++c) {
        const std::size_t idx = rest % nx;
        rest /= nx;
        point[c] = -box.half_width + box.dx * static_cast<double>(idx);
        weight *= (idx == 0 || idx + 1 == nx) ? 0.5 * box.dx : box.dx;
      }
      terms[flat] = weight * std::pow(std::abs(f(t, point)), p);
    }
    const double end_weight = (k == 0 || k == grid.n_main()) ? 0.5 : 1.0;
    slices[k] = end_weight * grid.step() * pairwise_sum(terms);
  }
  if (grid.n_main() == 0) return 0.0;
  return std::pow(pairwise_sum(slices), 1.0 / p);
}

BoundReport krylov_check(const ModelSpec& model, const PathSegment& x0, const SpaceTimeFunction& f, double p,
                         const SolverConfig& cfg, const QuadratureBox& box) {
  cfg.validate();
  const double threshold = (static_cast<double>(model.dim) + 2.0) / 2.0;
  if (!(p > threshold)) throw DomainError("Krylov exponent p must exceed (d+2)/2");
  const auto& grid = cfg.grid;
  const std::size_t n = cfg.replicates;
  std::vector<double> values(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const BrownianDriver driver(cfg.seed, i, grid, model.dim);
    const auto path = driftless_path(model, x0, grid, driver.increments());
    std::vector<double> steps(grid.n_main());
    for (std::size_t k = 0; k < grid.n_main(); ++k)
      steps[k] = f(grid.step() * static_cast<double>(k), path.state(grid.n_pre() + k)) * grid.step();
    values[i] = pairwise_sum(steps);
  });
  const auto moments = sample_moments(values);
  const double norm = lp_norm(f, p, model.dim, grid, box);
  BoundReport report;
  report.name = "krylov";
  report.lhs = moments.mean;
  report.lhs_stderr = moments.std_error;
  report.rhs = norm;
  report.n = n;
  report.seed = cfg.seed;
  if (norm == 0.0) {
    if (moments.mean != 0.0) throw DomainError("f has zero L^p norm on the box but a nonzero path integral");
    report.ratio = 0.0;
  } else {
    report.ratio = moments.mean / norm;
  }
  report.passed = std::isfinite(report.ratio);
  return report;
}

SampledFunction SampledFunction::sample(double from, double to, double dx, const std::function<double(double)>& fn) {
  const auto cells = whole_steps(to - from, dx);
  if (!(dx > 0.0) || !cells || *cells == 0) throw DomainError("sampling interval must be a positive multiple of dx");
  SampledFunction out{from, dx, {}};
  out.values.resize(*cells + 1);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = fn(from + dx * static_cast<double>(i));
  return out;
}

double SampledFunction::at(double x) const {
  const double tol = 1e-9 * dx;
  if (x < origin - tol || x > end() + tol) throw DomainError("point " + format_double(x) + " is outside the samples");
  const double pos = std::clamp((x - origin) / dx, 0.0, static_cast<double>(values.size() - 1));
  const auto i = std::min(static_cast<std::size_t>(pos), values.size() - 2);
  const double w = pos - static_cast<double>(i);
  return (1.0 - w) * values[i] + w * values[i + 1];
}

double SampledFunction::integral(double a, double b) const {
  if (b < a) return -integral(b, a);
  const double tol = 1e-9 * dx;
  if (a < origin - tol || b > end() + tol) throw DomainError("integration interval leaves the samples");
  a = std::max(a, origin);
  b = std::min(b, end());
  const double last = static_cast<double>(values.size() - 1);
  const double pa = std::clamp((a - origin) / dx, 0.0, last);
  const double pb = std::clamp((b - origin) / dx, 0.0, last);
  // Integrate cell by cell; the interpolant is linear on each cell.
  std::vector<double> pieces;
  for (double lo = pa; lo < pb;) {
    const auto cell = std::min(static_cast<std::size_t>(lo), values.size() - 2);
    const double hi = std::min(pb, static_cast<double>(cell + 1));
    if (!(hi > lo)) break;
    pieces.push_back(0.5 * (at(origin + dx * lo) + at(origin + dx * hi)) * (hi - lo) * dx);
    lo = hi;
  }
  return pairwise_sum(pieces);
}

namespace {

// Running integral of the interpolant: cumulative[i] = integral from origin to node i.
class Primitive {
 public:
  explicit Primitive(const SampledFunction& phi) : phi_(phi), cumulative_(phi.values.size(), 0.0) {
    for (std::size_t i = 1; i < cumulative_.size(); ++i)
      cumulative_[i] = cumulative_[i - 1] + 0.5 * (phi.values[i - 1] + phi.values[i]) * phi.dx;
  }

  double operator()(double x) const {
    const double last = static_cast<double>(phi_.values.size() - 1);
    const double pos = std::clamp((x - phi_.origin) / phi_.dx, 0.0, last);
    const auto i = std::min(static_cast<std::size_t>(pos), phi_.values.size() - 2);
    const double w = pos - static_cast<double>(i);
    const double v0 = phi_.values[i];
    const double v1 = phi_.values[i + 1];
    return cumulative_[i] + phi_.dx * w * (v0 + 0.5 * w * (v1 - v0));
  }

 private:
  const SampledFunction& phi_;
  std::vector<double> cumulative_;
};

double maximal_with(const SampledFunction& phi, const Primitive& prim, double x, std::span<const double> radii) {
  if (radii.empty()) throw DomainError("maximal function needs at least one radius");
  const double tol = 1e-9 * phi.dx;
  double best = 0.0;
  for (double r : radii) {
    if (!(r > 0.0)) throw DomainError("radii must be positive");
    if (x - r < phi.origin - tol || x + r > phi.end() + tol)
      throw DomainError("radius " + format_double(r) + " at " + format_double(x) + " leaves the sampled domain");
    best = std::max(best, (prim(x + r) - prim(x - r)) / (2.0 * r));
  }
  return best;
}

}  // namespace

double maximal_function(const SampledFunction& phi, double x, std::span<const double> radii) {
  if (phi.values.size() < 2) throw DomainError("maximal function needs at least two samples");
  return maximal_with(phi, Primitive(phi), x, radii);
}

std::vector<double> radii_up_to(double dx, double max_radius) {
  std::vector<double> out;
  for (std::size_t k = 1; dx * static_cast<double>(k) <= max_radius * (1 + 1e-12); ++k)
    out.push_back(dx * static_cast<double>(k));
  return out;
}

HardyLittlewoodReport hardy_littlewood_check(const SampledFunction& phi, const SampledFunction& derivative,
                                             std::span<const std::pair<double, double>> pairs) {
  SampledFunction magnitude = derivative;
  for (double& v : magnitude.values) v = std::abs(v);
  const Primitive prim(magnitude);
  std::map<double, double> cache;
  const auto maximal_at = [&](double x) {
    if (const auto it = cache.find(x); it != cache.end()) return it->second;
    const double room = std::min(x - magnitude.origin, magnitude.end() - x);
    const auto radii = radii_up_to(magnitude.dx, room);
    if (radii.empty()) throw DomainError("point " + format_double(x) + " has no admissible radius");
    return cache[x] = maximal_with(magnitude, prim, x, radii);
  };
  HardyLittlewoodReport report;
  report.passed = true;
  for (const auto& [x, y] : pairs) {
    if (x == y) continue;
    const double num = std::abs(phi.at(x) - phi.at(y));
    const double den = std::abs(x - y) * (maximal_at(x) + maximal_at(y));
    ++report.pairs;
    if (den == 0.0) {
      if (num != 0.0) {
        report.passed = false;
        report.messages.push_back("zero denominator with nonzero difference at (" + format_double(x) + ", " +
                                  format_double(y) + ")");
      }
      continue;
    }
    report.max_ratio = std::max(report.max_ratio, num / den);
  }
  return report;
}

double gronwall_constant(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("Gronwall exponent p must lie in (0, 1)");
  return std::min(4.0, 1.0 / p) * std::numbers::pi * p / std::sin(std::numbers::pi * p);
}

GronwallScenario constant_gronwall_scenario(double level, std::size_t steps, double step, std::size_t replicates) {
  if (!(level >= 0.0) || !(step > 0.0) || replicates == 0) throw DomainError("invalid constant scenario");
  GronwallPath path{std::vector<double>(steps + 1, level), std::vector<double>(steps + 1, 0.0),
                    std::vector<double>(steps + 1, 0.0), std::vector<double>(steps + 1, level)};
  return {step, std::vector<GronwallPath>(replicates, path)};
}

GronwallScenario deterministic_gronwall_scenario(double lambda, double level, std::size_t steps, double step) {
  if (!(lambda >= 0.0) || !(level >= 0.0) || !(step > 0.0)) throw DomainError("invalid deterministic scenario");
  GronwallPath path{std::vector<double>(steps + 1), std::vector<double>(steps + 1, lambda),
                    std::vector<double>(steps + 1, 0.0), std::vector<double>(steps + 1, level)};
  for (std::size_t k = 0; k <= steps; ++k) path.z[k] = level * std::pow(1.0 + lambda * step, static_cast<double>(k));
  return {step, {path}};
}

GronwallScenario brownian_gronwall_scenario(double scale, std::size_t steps, double step, std::size_t replicates,
                                            std::uint64_t seed) {
  if (!(step > 0.0) || replicates == 0) throw DomainError("invalid Brownian scenario");
  GronwallScenario out{step, std::vector<GronwallPath>(replicates)};
  const double root = std::sqrt(step);
  for (std::size_t i = 0; i < replicates; ++i) {
    const NormalStream normals(seed, i);
    GronwallPath& path = out.paths[i];
    path.z.resize(steps + 1);
    path.psi.assign(steps + 1, 0.0);
    path.m.assign(steps + 1, 0.0);
    path.h.resize(steps + 1);
    double w = 0.0;
    double running = 0.0;
    for (std::size_t k = 0; k <= steps; ++k) {
      if (k > 0) w += root * normals.at(k - 1);
      path.z[k] = std::abs(scale * w);
      running = std::max(running, path.z[k]);
      path.h[k] = running;
    }
  }
  return out;
}

GronwallReport gronwall_bound_check(const GronwallScenario& scenario, double p, double mu, double nu) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("p must lie in (0, 1)");
  if (!(mu > 1.0) || !(nu > 1.0) || std::abs(1.0 / mu + 1.0 / nu - 1.0) > 1e-12)
    throw DomainError("mu and nu must be conjugate exponents above 1");
  if (!(p * nu < 1.0)) throw DomainError("p nu must be below 1");
  if (scenario.paths.empty()) throw DomainError("scenario has no paths");
  const double h = scenario.step;

  std::vector<double> sup_z;
  std::vector<double> exp_psi;
  std::vector<double> h_star_nu;
  std::vector<double> h_star;
  std::vector<double> psi_integrals;
  for (std::size_t i = 0; i < scenario.paths.size(); ++i) {
    const auto& path = scenario.paths[i];
    const std::size_t len = path.z.size();
    if (path.psi.size() != len || path.m.size() != len || path.h.size() != len || len == 0)
      throw ConfigError("scenario path " + std::to_string(i) + " has mismatched lengths");
    double integral = 0.0;
    double sup = 0.0;
    double hs = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      if (path.z[k] < 0.0 || path.psi[k] < 0.0 || path.h[k] < 0.0)
        throw ConfigError("scenario path " + std::to_string(i) + " has a negative Z, psi or H");
      const double rhs = integral + path.m[k] + path.h[k];
      if (path.z[k] > rhs + 1e-12 * std::max(1.0, std::abs(rhs)))
        throw ConfigError("scenario path " + std::to_string(i) + " violates the hypothesis at step " +
                          std::to_string(k));
      integral += path.psi[k] * path.z[k] * h;
      sup = std::max(sup, path.z[k]);
      hs = std::max(hs, path.h[k]);
    }
    std::vector<double> psi_steps(len > 0 ? len - 1 : 0);
    for (std::size_t k = 0; k + 1 < len; ++k) psi_steps[k] = path.psi[k] * h;
    const double psi_integral = pairwise_sum(psi_steps);
    sup_z.push_back(std::pow(sup, p));
    exp_psi.push_back(std::exp(p * mu * psi_integral));
    h_star_nu.push_back(std::pow(hs, p * nu));
    h_star.push_back(std::pow(hs, p));
    psi_integrals.push_back(psi_integral);
  }
  const auto lhs = sample_moments(sup_z);
  GronwallReport report;
  report.lhs = lhs.mean;
  report.lhs_stderr = lhs.std_error;
  report.rhs = std::pow(gronwall_constant(p * nu) + 1.0, 1.0 / nu) *
               std::pow(sample_moments(exp_psi).mean, 1.0 / mu) * std::pow(sample_moments(h_star_nu).mean, 1.0 / nu);
  report.passed = report.lhs <= report.rhs + kPassSigmas * report.lhs_stderr;
  const bool same_psi = std::all_of(scenario.paths.begin(), scenario.paths.end(),
                                    [&](const GronwallPath& path) { return path.psi == scenario.paths.front().psi; });
  if (same_psi)
    report.deterministic_bound = (1.0 + gronwall_constant(p)) * std::exp(p * psi_integrals.front()) *
                                 sample_moments(h_star).mean;
  return report;
}

}  // namespace sdde
