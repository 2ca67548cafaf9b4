#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdde/paths.hpp"

namespace sdde {

using Matrix = Eigen::MatrixXd;

inline constexpr double kDefaultDriftClip = 1e12;

/// B(t, X_t): functional of the segment on [-r, 0].
using SegmentDrift = std::function<void(double t, const SegmentView& seg, std::span<double> out)>;
/// b(t, x): pointwise drift, evaluated at the current state only.
using PointwiseDrift = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
/// Scalar field (t, x) -> R, used by the one-dimensional PDE tools.
using ScalarField = std::function<double(double t, double x)>;

/// Drift functional, optionally split as B = B_strict(t, X_t) + b(t, X(t)) where B_strict only
/// reads the segment at lags <= -strict_past_lag and b may be singular (it is clipped).
class DriftFunctional {
 public:
  static DriftFunctional zero(std::size_t dim);
  /// General bounded-memory functional with no declared split.
  static DriftFunctional functional(std::size_t dim, SegmentDrift fn);
  /// B = strict_past + pointwise; either part may be empty.
  static DriftFunctional split(std::size_t dim, SegmentDrift strict_past, PointwiseDrift pointwise);

  /// Writes B(t, seg) into out and returns the number of clip events (0 or 1).
  /// The pointwise part is capped at norm `clip`; infinite coordinates count as clipped.
  std::size_t evaluate(double t, const SegmentView& seg, std::span<double> out,
                       double clip = kDefaultDriftClip) const;

  std::size_t dim() const { return dim_; }
  bool is_zero() const { return !general_ && !strict_past_ && !pointwise_; }
  bool has_split() const { return !general_; }
  const SegmentDrift& strict_past() const { return strict_past_; }
  const PointwiseDrift& pointwise() const { return pointwise_; }

 private:
  std::size_t dim_ = 1;
  SegmentDrift general_;
  SegmentDrift strict_past_;
  PointwiseDrift pointwise_;
};

/// sigma(t, x) as a d x d matrix.
class DiffusionField {
 public:
  using Fn = std::function<void(double t, std::span<const double> x, Matrix& out)>;

  static DiffusionField constant(Matrix value);
  static DiffusionField scaled_identity(std::size_t dim, double scale);
  static DiffusionField general(std::size_t dim, Fn fn);

  /// out is resized to d x d.
  void evaluate(double t, std::span<const double> x, Matrix& out) const;
  Matrix operator()(double t, std::span<const double> x) const {
    Matrix m;
    evaluate(t, x, m);
    return m;
  }

  std::size_t dim() const { return dim_; }
  bool is_constant() const { return !fn_; }
  const Matrix& constant_value() const { return constant_; }

 private:
  std::size_t dim_ = 1;
  Matrix constant_;
  Fn fn_;
};

/// Declared envelopes for the drift growth hypotheses. Nothing here is inferred:
/// validators only certify declared values on probe sets.
struct ConditionEnvelopes {
  /// F(t, x) in the square-integrability envelope; empty means undeclared.
  std::function<double(double t, std::span<const double> x)> F;
  std::optional<double> C1;
  std::optional<double> C2;
  /// Superlinear envelope H and monotone G of the growth condition used for continuity results.
  std::function<double(double)> H;
  std::function<double(double)> G;
  /// Declared (not verified) continuity of x -> B(t, x) for t in [0, r).
  bool continuous_on_initial_window = false;
};

struct ModelSpec {
  std::string name;
  std::size_t dim = 1;
  double delay = 1.0;
  DriftFunctional drift = DriftFunctional::zero(1);
  DiffusionField diffusion = DiffusionField::scaled_identity(1, 1.0);
  /// r_B: the strict-past part reads only lags <= -r_B. Must lie in (0, r).
  std::optional<double> strict_past_lag;
  double c_sigma = 1.0;
  ConditionEnvelopes envelopes;

  /// Throws ConfigError when the structural invariants do not hold.
  void validate() const;
};

/// sgn(x) = 1 for x >= 0 and -1 for x < 0.
constexpr double sgn(double x) { return x >= 0.0 ? 1.0 : -1.0; }

/// Drift sgn(X(t - 1)); d = 1, r >= 1.
void sgn_delay_drift(double t, const SegmentView& seg, std::span<double> out);

/// Borel measure on [-r, 0] restricted to grid atoms plus a uniform density on [from, to].
struct KernelMeasure {
  struct Atom {
    double lag;
    double weight;
  };
  struct Density {
    double from;
    double to;
    double value;
  };
  std::vector<Atom> atoms;
  std::optional<Density> density;

  /// Largest lag carrying mass (closest to 0); nullopt for the zero measure.
  std::optional<double> max_support() const;
};

using KernelFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;

/// Kernel acting coordinatewise with a scalar function.
KernelFn coordinatewise_kernel(std::function<double(double)> fn);

/// B(t, X_t) = integral of k(t, X(t+s)) dmu(s): atoms exactly, density by the trapezoid rule.
/// Evaluation throws DomainError for atoms or density endpoints off the segment grid.
SegmentDrift kernel_drift(KernelFn k, KernelMeasure mu);

// Built-in model families.
ModelSpec sgn_delay_model(double envelope_horizon = 1.0);
/// Kernel drift with sigma = s I; declares the strict-past lag when supp mu stays below 0.
ModelSpec kernel_model(std::size_t dim, double delay, KernelFn k, KernelMeasure mu, double sigma_scale,
                       bool kernel_continuous = true);
/// b(x) = scale * |x - center|^{-alpha}, d = 1, pointwise only.
ModelSpec pointwise_singular_model(double delay, double center, double alpha, double scale, double sigma_scale);
/// B(t, X_t) = a X(t) + c coordinatewise, sigma = s I.
ModelSpec linear_model(std::size_t dim, double delay, double a, std::vector<double> c, double sigma_scale);
/// b(x) = beta sgn(x), d = 1, pointwise only.
ModelSpec sign_drift_model(double delay, double beta, double sigma_scale);

struct ValidationReport {
  bool passed = false;
  double min_value = 0.0;
  double max_value = 0.0;
  std::size_t points_checked = 0;
  std::size_t evaluation_errors = 0;
  std::vector<std::string> messages;
};

struct DiffusionProbe {
  double t;
  std::vector<double> x;
};

struct DiffusionPairProbe {
  double t;
  std::vector<double> x;
  std::vector<double> y;
};

inline constexpr double kValidationTolerance = 1e-10;

/// Eigenvalue range of sigma sigma^T over the probes; passes iff it lies in
/// [1/C_sigma - tol, C_sigma + tol].
ValidationReport check_ellipticity(const DiffusionField& field, std::span<const DiffusionProbe> points,
                                   double c_sigma);
/// Largest Hilbert-Schmidt difference quotient; passes iff <= C_sigma + tol.
ValidationReport check_lipschitz(const DiffusionField& field, std::span<const DiffusionPairProbe> pairs,
                                 double c_sigma);
/// int_0^t |B|^2 ds <= int_0^t |F(s, x(s))| ds + C1 sup_{[-r,t]} |x|^2 + C2 at every grid time of
/// every probe path. Throws ConfigError when F, C1 or C2 is undeclared.
ValidationReport check_drift_envelope(const ModelSpec& model, std::span<const SamplePath> probes);

}  // namespace sdde
