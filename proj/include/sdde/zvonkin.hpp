#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "json.hpp"
#include "sdde/girsanov.hpp"
#include "sdde/models.hpp"
#include "sdde/paths.hpp"
#include "sdde/solver.hpp"

namespace sdde {

/// Space-time grid [-L, L] x [S, T] for the one-dimensional backward equation.
class PdeGrid {
 public:
  /// Throws DomainError unless L > 0, dx, dt > 0, 2L/dx and (T-S)/dt are integers and 2L/dx >= 4.
  static PdeGrid make(double half_width, double dx, double start, double end, double dt);

  double half_width() const { return half_width_; }
  double dx() const { return dx_; }
  double dt() const { return dt_; }
  double start() const { return start_; }
  double end() const { return end_; }
  std::size_t nx() const { return nx_; }  // number of space intervals
  std::size_t nt() const { return nt_; }  // number of time steps
  double x(std::size_t i) const { return -half_width_ + dx_ * static_cast<double>(i); }
  double t(std::size_t j) const { return j == nt_ ? end_ : start_ + dt_ * static_cast<double>(j); }

 private:
  double half_width_ = 1.0;
  double dx_ = 1.0;
  double start_ = 0.0;
  double end_ = 1.0;
  double dt_ = 1.0;
  std::size_t nx_ = 0;
  std::size_t nt_ = 0;
};

/// Grid values of the correction u~(t, x; T) with u~(T, .) = 0; u = u~ + x.
class PdeSolution {
 public:
  /// values holds (nt + 1) rows of (nx + 1) entries, row j at time t(j).
  PdeSolution(PdeGrid grid, std::vector<double> values);

  const PdeGrid& grid() const { return grid_; }
  double horizon() const { return grid_.end(); }
  double value(std::size_t j, std::size_t i) const { return values_[j * (grid_.nx() + 1) + i]; }
  /// Centered first difference at an interior node (one-sided at the ends).
  double slope(std::size_t j, std::size_t i) const;
  /// Bilinear read; x must lie in [-L, L] and t in [S, T].
  double at(double t, double x) const;
  /// Bilinear read of the centered slope field.
  double slope_at(double t, double x) const;
  const std::vector<double>& values() const { return values_; }

 private:
  PdeGrid grid_;
  std::vector<double> values_;
};

/// Implicit finite differences for  d_t u + 1/2 sigma^2 u_xx + b u_x + b = 0,  u(T) = 0,
/// marching from T down to S: centered u_xx, upwind b u_x, linear extrapolation at +-L.
/// Throws NumericalError if a pivot of the tridiagonal system vanishes.
PdeSolution solve_backward_pde(const ScalarField& sigma, const ScalarField& b, const PdeGrid& grid);

/// max over the grid of |centered first difference of u~|.
double gradient_bound(const PdeSolution& sol);

void write_pde_csv(std::ostream& os, const PdeSolution& sol);

struct PdeGridTemplate {
  double half_width = 10.0;
  double dx = 0.02;
  double dt = 1e-3;
};

struct DeltaWindow {
  double start = 0.0;
  double end = 0.0;
  double max_gradient = 0.0;
};

struct DeltaReport {
  double delta = 0.0;
  std::size_t windows_tested = 0;
  double max_gradient = 0.0;
  /// Windows of length delta that passed, with their gradient bound.
  std::vector<DeltaWindow> certified;
};

/// {delta, windows_tested, max_gradient}
void to_json(nlohmann::json& j, const DeltaReport& r);

inline constexpr double kContractionBound = 0.5;

/// Largest delta in {T0, T0/2, ...} such that every window of length delta in a cover of
/// [0, T0] (at most max_cover evenly spaced windows) has gradient_bound <= 1/2. Within a
/// window dt is shrunk so the window holds a whole number of steps. Throws NumericalError
/// once delta would drop below 4 dt.
DeltaReport select_delta(const ScalarField& sigma, const ScalarField& b, double horizon,
                         const PdeGridTemplate& tmpl, std::size_t max_cover = 5);

struct TransformedPath {
  SamplePath path;
  /// True when some transformed node left [-L, L]; those nodes are copied untransformed.
  bool exited = false;
};

/// Y(t_k) = u~(t_k, X(t_k)) + X(t_k) at nodes with t_k in [S, T]; other nodes and the
/// increments are copied through. d = 1.
TransformedPath transform_path(const PdeSolution& sol, const SamplePath& path);

struct ResidualReport {
  /// estimate = max over blocks of |mean drift of Y|, stderr = that block's standard error.
  EstimatorReport summary;
  std::vector<double> block_drift;
  std::vector<double> block_stderr;
  std::size_t exited = 0;
  /// More than 10% of the paths left the PDE domain.
  bool inconclusive = false;
};

/// Discretization allowance for the residual drift: kResidualAllowance * (dx + dt + sqrt(h)),
/// the orders of the upwind PDE scheme and of Euler-Maruyama across the drift's jump.
inline constexpr double kResidualAllowance = 1.0;
double residual_allowance(const PdeGrid& grid, double h);

/// Empirical drift of Y = u(t, X) along Euler-Maruyama paths of a model whose drift is a
/// pointwise b only. Steps inside [S, T] are grouped into `blocks` consecutive blocks; each
/// block reports the mean of sum_k (dY_k - u_x sigma dW_k) / (block length), which has the
/// same expectation as the drift of Y because u_x sigma dW_k has mean zero.
ResidualReport drift_removal_residual(const ModelSpec& model, const PdeSolution& sol, const PathSegment& x0,
                                      const SolverConfig& cfg, std::size_t blocks = 10);

}  // namespace sdde
