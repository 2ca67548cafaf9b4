#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdde/girsanov.hpp"
#include "sdde/models.hpp"
#include "sdde/paths.hpp"
#include "sdde/solver.hpp"

namespace sdde {

enum class Verdict { kContinuous, kStable, kGapDetected, kInconclusive };
std::string to_string(Verdict v);

/// Thresholds of the three-valued decision rule, in combined standard errors.
inline constexpr double kPassSigmas = 3.0;
inline constexpr double kGapSigmas = 5.0;

struct ProbePoint {
  /// ||y_n - x||_inf
  double distance = 0.0;
  double estimate = 0.0;
  double std_error = 0.0;
  /// Quantity that must vanish as y_n -> x, with its combined standard error.
  double gap = 0.0;
  double gap_stderr = 0.0;
};

struct ProbeReport {
  std::string kind;
  double t = 0.0;
  double reference_estimate = 0.0;
  double reference_stderr = 0.0;
  std::vector<ProbePoint> points;
  /// Stability probes: intercept of the fit e = a + b d^gamma and its standard error.
  std::optional<double> limit;
  std::optional<double> limit_stderr;
  /// True when the probe time does not exceed the delay (outside the regime of the continuity result).
  bool before_delay = false;
  Verdict verdict = Verdict::kInconclusive;
  double pass_sigmas = kPassSigmas;
  double gap_sigmas = kGapSigmas;
  std::uint64_t seed = 0;
  std::string config_digest;
};

void to_json(nlohmann::json& j, const ProbeReport& r);
/// probe index, distance, estimate, stderr
void write_probe_csv(std::ostream& os, const ProbeReport& r);

/// Decision rule on a gap sequence: `vanishing` iff the final gap <= 3 combined stderr and no
/// consecutive increase exceeds 3 stderr of the difference; gap-detected iff the final gap >= 5
/// combined stderr (and is positive); inconclusive otherwise.
Verdict decide(std::span<const double> gaps, std::span<const double> stderrs, Verdict vanishing);

enum class EstimatorKind { kGirsanov, kDirect };

/// Estimates E f(X_t^{y_n}) and E f(X_t^x) with the same seed and reports the gaps
/// |estimate(y_n) - estimate(x)|.
ProbeReport strong_feller_probe(const ModelSpec& model, const SegmentFunctional& f, const PathSegment& x,
                                std::span<const PathSegment> ys, double t, const SolverConfig& cfg,
                                EstimatorKind estimator = EstimatorKind::kGirsanov);

/// Estimates E ||X_t^{y_n} - X_t^x||_inf^gamma over shared-noise pairs. The vanishing quantity is the
/// intercept a of a weighted least-squares fit e_n = a + b d_n^gamma, with its standard error
/// inflated by the fit's reduced chi-square when that exceeds one.
ProbeReport stability_probe(const ModelSpec& model, const PathSegment& x, std::span<const PathSegment> ys, double t,
                            double gamma, const SolverConfig& cfg);

struct BoundReport {
  std::string name;
  double lhs = 0.0;
  double lhs_stderr = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
  std::size_t n = 0;
  bool passed = false;
  std::uint64_t seed = 0;
  std::string config_digest;
};

void to_json(nlohmann::json& j, const BoundReport& r);

/// Right side of the exponential supremum bound for the driftless process:
/// 4 / sqrt(1 - 2 alpha d C T) * exp(alpha |x(0)|^2 / (1 - 2 alpha d C T)).
double exp_sup_bound(double alpha, std::size_t dim, double c_sigma, double horizon, double x0_norm);

/// Monte Carlo of E exp(alpha sup_{[0,T]} |M|^2) against exp_sup_bound; T = cfg.grid.horizon().
/// Throws DomainError unless 0 <= alpha < 1 / (2 d C_sigma T).
BoundReport exp_sup_bound_check(const ModelSpec& model, const PathSegment& x0, double alpha, const SolverConfig& cfg);

using SpaceTimeFunction = std::function<double(double t, std::span<const double> x)>;

/// Box [-half_width, half_width]^d and spacing used for the L^p norm quadrature.
struct QuadratureBox {
  double half_width = 10.0;
  double dx = 0.01;
};

/// Product trapezoid approximation of ||f||_{L^p([0,T] x box)} with time nodes of `grid`.
double lp_norm(const SpaceTimeFunction& f, double p, std::size_t dim, const TimeGrid& grid, const QuadratureBox& box);

/// ratio = (MC estimate of E int_0^T f(t, M(t)) dt) / ||f||_{L^p}. Requires p > (d+2)/2.
/// A zero norm gives ratio 0 when the integral is also 0 and a DomainError otherwise.
BoundReport krylov_check(const ModelSpec& model, const PathSegment& x0, const SpaceTimeFunction& f, double p,
                         const SolverConfig& cfg, const QuadratureBox& box);

/// Uniformly sampled function on [origin, origin + (n-1) dx], read by linear interpolation.
struct SampledFunction {
  double origin = 0.0;
  double dx = 1.0;
  std::vector<double> values;

  static SampledFunction sample(double from, double to, double dx, const std::function<double(double)>& fn);
  double end() const { return origin + dx * static_cast<double>(values.size() - 1); }
  double at(double x) const;
  /// Exact integral of the interpolant over [a, b] (the trapezoid rule on grid-aligned ends).
  double integral(double a, double b) const;
};

/// max over radii of the average of phi on [x - r, x + r]. Throws DomainError if an interval
/// leaves the sampled domain or a radius is not positive.
double maximal_function(const SampledFunction& phi, double x, std::span<const double> radii);

/// {dx, 2 dx, ..., max_radius}
std::vector<double> radii_up_to(double dx, double max_radius);

struct HardyLittlewoodReport {
  double max_ratio = 0.0;
  std::size_t pairs = 0;
  bool passed = false;
  std::vector<std::string> messages;
};

/// max over pairs of |phi(x) - phi(y)| / (|x - y| (M|phi'|(x) + M|phi'|(y))). Each maximal function
/// uses every multiple of dx whose interval stays inside the sampled domain.
HardyLittlewoodReport hardy_littlewood_check(const SampledFunction& phi, const SampledFunction& derivative,
                                             std::span<const std::pair<double, double>> pairs);

/// c_p = min(4, 1/p) pi p / sin(pi p) for p in (0, 1).
double gronwall_constant(double p);

/// One replicate of a scenario Z(t) <= int psi Z + M(t) + H(t) on a uniform grid.
struct GronwallPath {
  std::vector<double> z;
  std::vector<double> psi;
  std::vector<double> m;
  std::vector<double> h;
};

struct GronwallScenario {
  double step = 0.01;
  std::vector<GronwallPath> paths;
};

GronwallScenario constant_gronwall_scenario(double level, std::size_t steps, double step, std::size_t replicates);
/// Z solves the discrete equality Z_k = H + sum_{j<k} lambda Z_j h, so Z_k = H (1 + lambda h)^k.
GronwallScenario deterministic_gronwall_scenario(double lambda, double level, std::size_t steps, double step);
/// Z = |scale W|, H its running maximum, psi = M = 0.
GronwallScenario brownian_gronwall_scenario(double scale, std::size_t steps, double step, std::size_t replicates,
                                            std::uint64_t seed);

struct GronwallReport {
  double lhs = 0.0;
  double lhs_stderr = 0.0;
  double rhs = 0.0;
  /// (1 + c_p) exp(p int psi) E (H*)^p, present when psi is the same on every path.
  std::optional<double> deterministic_bound;
  bool passed = false;
};

/// E sup Z^p against (c_{p nu} + 1)^{1/nu} (E exp(p mu int psi))^{1/mu} (E (H*)^{p nu})^{1/nu};
/// passes iff lhs <= rhs + 3 stderr. Throws DomainError for inadmissible exponents and
/// ConfigError when a path violates the hypothesis.
GronwallReport gronwall_bound_check(const GronwallScenario& scenario, double p, double mu, double nu);

}  // namespace sdde
