#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sdde/models.hpp"
#include "sdde/paths.hpp"

namespace sdde {

struct SolverConfig {
  TimeGrid grid;
  std::uint64_t seed = 0;
  std::size_t replicates = 1;
  double drift_clip = kDefaultDriftClip;
  /// 0 means one worker per available core. Results never depend on this value.
  std::size_t workers = 1;

  /// Throws ConfigError unless replicates >= 1 and drift_clip > 0.
  void validate() const;
};

/// Explicit Euler-Maruyama scheme on a prescribed increment sequence:
///   X(t_{k+1}) = X(t_k) + B(t_k, X_{t_k}) h + sigma(t_k, X(t_k)) dW_k.
/// Throws IntegrationError with the failing step index when a state becomes non-finite.
SamplePath euler_maruyama(const ModelSpec& model, const PathSegment& x0, const TimeGrid& grid,
                          std::vector<double> increments, double drift_clip = kDefaultDriftClip);
SamplePath euler_maruyama(const ModelSpec& model, const PathSegment& x0, const SolverConfig& cfg,
                          const BrownianDriver& driver);

/// Same scheme with the drift switched off: the reference process dM = sigma(t, M) dW.
SamplePath driftless_path(const ModelSpec& model, const PathSegment& x0, const TimeGrid& grid,
                          std::vector<double> increments);
SamplePath driftless_path(const ModelSpec& model, const PathSegment& x0, const SolverConfig& cfg,
                          const BrownianDriver& driver);

/// Two solutions driven by one increment stream.
struct CoupledPair {
  SamplePath first;
  SamplePath second;
};

CoupledPair coupled_paths(const ModelSpec& model, const PathSegment& x0, const PathSegment& y0,
                          const SolverConfig& cfg, const BrownianDriver& driver);

}  // namespace sdde
