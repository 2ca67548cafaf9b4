#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdde/models.hpp"
#include "sdde/paths.hpp"
#include "sdde/solver.hpp"

namespace sdde {

/// Bounded functional of a segment, f in B_b(C), with its declared bound sup |f|.
struct SegmentFunctional {
  std::string name;
  std::function<double(const SegmentView&)> fn;
  double bound = 1.0;
};

SegmentFunctional constant_one();
/// tanh(xi(0)_coord)
SegmentFunctional tanh_endpoint(std::size_t coord = 0);
/// Half-line indicator 1{xi(0)_coord > threshold} smoothed at `scale`: (1 + tanh((x - threshold)/scale)) / 2.
SegmentFunctional smoothed_half_line(std::size_t coord, double threshold, double scale);
/// tanh(||xi||_inf)
SegmentFunctional tanh_sup_norm();

/// A driftless path M^x with its log density exp(int a^T dW - 1/2 int |a|^2 dt), a = sigma^{-1} B.
struct WeightedSample {
  SamplePath path;
  double log_weight = 0.0;
  /// int |a|^2 dt over the weighted steps.
  double quad_var = 0.0;
  /// 1/2 int |a|^2 dt on each window of the supplied partition (one window [0, T] by default).
  std::vector<double> window_exponents;
  std::size_t clip_events = 0;

  bool flagged() const { return clip_events > 0 || !std::isfinite(log_weight); }
};

/// Threshold on the condition estimate of sigma beyond which a step is treated as singular.
inline constexpr double kSingularCondition = 1e12;

/// Weight of a driftless path over its first `steps` steps (all of [0, T] by default).
/// window_bounds, when given, is 0 = T_0 < ... < T_n on the grid. Throws WeightError
/// with the step index when sigma is numerically singular.
WeightedSample girsanov_weight(const ModelSpec& model, SamplePath path, std::span<const double> window_bounds = {},
                               std::optional<std::size_t> steps = std::nullopt,
                               double drift_clip = kDefaultDriftClip);

struct EstimatorReport {
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  double ess = 0.0;
  std::size_t flagged = 0;
  std::uint64_t seed = 0;
  std::string config_digest;
};

/// {estimate, stderr, n, ess, flagged, seed, config_digest}
void to_json(nlohmann::json& j, const EstimatorReport& r);

/// (1/N) sum_i D_i f(M_{t,i}) over driftless paths. Paths whose weight overflows are
/// flagged and left out of the average (n counts the terms used); paths with clipped
/// drift or |f| above its declared bound are flagged but kept. Throws EstimationError
/// when every path is flagged.
EstimatorReport weighted_expectation(const ModelSpec& model, const PathSegment& x0, const SegmentFunctional& f,
                                     double t, const SolverConfig& cfg);

/// Plain Monte Carlo of f(X_t) over Euler-Maruyama paths of the full equation.
EstimatorReport direct_expectation(const ModelSpec& model, const PathSegment& x0, const SegmentFunctional& f,
                                   double t, const SolverConfig& cfg);

/// Greedy left-to-right partition 0 = T_0 < ... < T_n = T of maximal windows whose
/// pilot estimate of E exp(1/2 int |a|^2 dt) stays <= target. Pilot paths use
/// cfg.replicates, cfg.seed and cfg.grid (horizon T). Throws NumericalError when a
/// single step already exceeds the target.
std::vector<double> novikov_partition(const ModelSpec& model, const PathSegment& x0, double target,
                                      const SolverConfig& pilot_cfg);

/// (sum w)^2 / sum w^2. Throws DomainError for empty input or negative weights and
/// EstimationError when all weights are zero.
double ess(std::span<const double> weights);
/// ess of exp(lw - max lw), computed in log space.
double ess_from_log_weights(std::span<const double> log_weights);

}  // namespace sdde
