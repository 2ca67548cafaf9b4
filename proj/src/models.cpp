#include "sdde/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sdde/errors.hpp"

namespace sdde {

namespace {

// Caps the norm of v at clip; returns true if anything was capped.
bool clip_in_place(std::span<double> v, double clip) {
  bool clipped = false;
  for (double& x : v) {
    if (std::isinf(x)) {
      x = std::copysign(clip, x);
      clipped = true;
    }
  }
  const double norm = euclidean_norm(v);
  if (norm > clip) {
    const double scale = clip / norm;
    for (double& x : v) x *= scale;
    clipped = true;
  }
  return clipped;
}

}  // namespace

DriftFunctional DriftFunctional::zero(std::size_t dim) {
  DriftFunctional d;
  d.dim_ = dim;
  return d;
}

DriftFunctional DriftFunctional::functional(std::size_t dim, SegmentDrift fn) {
  DriftFunctional d;
  d.dim_ = dim;
  d.general_ = std::move(fn);
  return d;
}

DriftFunctional DriftFunctional::split(std::size_t dim, SegmentDrift strict_past, PointwiseDrift pointwise) {
  DriftFunctional d;
  d.dim_ = dim;
  d.strict_past_ = std::move(strict_past);
  d.pointwise_ = std::move(pointwise);
  return d;
}

std::size_t DriftFunctional::evaluate(double t, const SegmentView& seg, std::span<double> out, double clip) const {
  std::fill(out.begin(), out.end(), 0.0);
  if (general_) {
    general_(t, seg, out);
    return 0;
  }
  if (strict_past_) strict_past_(t, seg, out);
  if (!pointwise_) return 0;

  double local[8];
  std::vector<double> heap;
  std::span<double> b;
  if (dim_ <= 8) {
    b = std::span<double>(local, dim_);
  } else {
    heap.resize(dim_);
    b = heap;
  }
  std::fill(b.begin(), b.end(), 0.0);
  pointwise_(t, seg.latest(), b);
  const bool clipped = clip_in_place(b, clip);
  for (std::size_t i = 0; i < dim_; ++i) out[i] += b[i];
  return clipped ? 1 : 0;
}

DiffusionField DiffusionField::constant(Matrix value) {
  if (value.rows() != value.cols() || value.rows() == 0) throw ConfigError("diffusion matrix must be square");
  DiffusionField f;
  f.dim_ = static_cast<std::size_t>(value.rows());
  f.constant_ = std::move(value);
  return f;
}

DiffusionField DiffusionField::scaled_identity(std::size_t dim, double scale) {
  const auto n = static_cast<Eigen::Index>(dim);
  return constant(scale * Matrix::Identity(n, n));
}

DiffusionField DiffusionField::general(std::size_t dim, Fn fn) {
  DiffusionField f;
  f.dim_ = dim;
  f.fn_ = std::move(fn);
  return f;
}

void DiffusionField::evaluate(double t, std::span<const double> x, Matrix& out) const {
  if (!fn_) {
    out = constant_;
    return;
  }
  const auto n = static_cast<Eigen::Index>(dim_);
  out.resize(n, n);
  fn_(t, x, out);
}

void ModelSpec::validate() const {
  if (dim < 1) throw ConfigError("model dimension must be >= 1");
  if (!(delay > 0.0)) throw ConfigError("model delay r must be positive");
  if (drift.dim() != dim) throw ConfigError("drift dimension does not match the model");
  if (diffusion.dim() != dim) throw ConfigError("diffusion dimension does not match the model");
  if (!(c_sigma >= 1.0)) throw ConfigError("C_sigma must be >= 1");
  if (strict_past_lag && !(*strict_past_lag > 0.0 && *strict_past_lag < delay))
    throw ConfigError("strict-past lag must lie in (0, r)");
}

void sgn_delay_drift(double /*t*/, const SegmentView& seg, std::span<double> out) {
  out[0] = sgn(seg.at_lag(-1.0)[0]);
}

std::optional<double> KernelMeasure::max_support() const {
  std::optional<double> best;
  for (const auto& a : atoms)
    if (a.weight != 0.0) best = std::max(best.value_or(a.lag), a.lag);
  if (density && density->value != 0.0 && density->to > density->from)
    best = std::max(best.value_or(density->to), density->to);
  return best;
}

KernelFn coordinatewise_kernel(std::function<double(double)> fn) {
  return [fn = std::move(fn)](double /*t*/, std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
  };
}

SegmentDrift kernel_drift(KernelFn k, KernelMeasure mu) {
  return [k = std::move(k), mu = std::move(mu)](double t, const SegmentView& seg, std::span<double> out) {
    const std::size_t d = seg.dim();
    double local[8];
    std::vector<double> heap;
    std::span<double> kv;
    if (d <= 8) {
      kv = std::span<double>(local, d);
    } else {
      heap.resize(d);
      kv = heap;
    }
    for (const auto& atom : mu.atoms) {
      k(t, seg.at_lag(atom.lag), kv);
      for (std::size_t i = 0; i < d; ++i) out[i] += atom.weight * kv[i];
    }
    if (mu.density && mu.density->to > mu.density->from) {
      const std::size_t lo = seg.node_at_lag(mu.density->from);
      const std::size_t hi = seg.node_at_lag(mu.density->to);
      const double w = mu.density->value * seg.step();
      for (std::size_t j = lo; j <= hi; ++j) {
        k(t, seg.state(j), kv);
        const double node_weight = (j == lo || j == hi) ? 0.5 * w : w;
        for (std::size_t i = 0; i < d; ++i) out[i] += node_weight * kv[i];
      }
    }
  };
}

ModelSpec sgn_delay_model(double envelope_horizon) {
  ModelSpec m;
  m.name = "sgn_delay";
  m.dim = 1;
  m.delay = 1.0;
  m.drift = DriftFunctional::functional(1, sgn_delay_drift);
  m.diffusion = DiffusionField::scaled_identity(1, 1.0);
  m.c_sigma = 1.0;
  m.envelopes.F = [](double, std::span<const double>) { return 0.0; };
  m.envelopes.C1 = 0.0;
  m.envelopes.C2 = envelope_horizon;  // |B|^2 == 1
  m.envelopes.continuous_on_initial_window = false;
  return m;
}

namespace {

double c_sigma_for_scale(double s) {
  const double s2 = s * s;
  return std::max({1.0, s2, 1.0 / s2});
}

}  // namespace

ModelSpec kernel_model(std::size_t dim, double delay, KernelFn k, KernelMeasure mu, double sigma_scale,
                       bool kernel_continuous) {
  ModelSpec m;
  m.name = "kernel";
  m.dim = dim;
  m.delay = delay;
  const auto top = mu.max_support();
  auto drift = kernel_drift(std::move(k), std::move(mu));
  if (top && *top < 0.0 && -*top < delay) {
    m.strict_past_lag = -*top;
    m.drift = DriftFunctional::split(dim, std::move(drift), nullptr);
  } else {
    m.drift = DriftFunctional::functional(dim, std::move(drift));
  }
  m.diffusion = DiffusionField::scaled_identity(dim, sigma_scale);
  m.c_sigma = c_sigma_for_scale(sigma_scale);
  m.envelopes.continuous_on_initial_window = kernel_continuous;
  return m;
}

ModelSpec pointwise_singular_model(double delay, double center, double alpha, double scale, double sigma_scale) {
  ModelSpec m;
  m.name = "pointwise_singular";
  m.dim = 1;
  m.delay = delay;
  m.drift = DriftFunctional::split(1, nullptr, [=](double, std::span<const double> x, std::span<double> out) {
    const double dist = std::abs(x[0] - center);
    out[0] = dist == 0.0 ? scale * std::numeric_limits<double>::infinity() : scale * std::pow(dist, -alpha);
  });
  m.diffusion = DiffusionField::scaled_identity(1, sigma_scale);
  m.c_sigma = c_sigma_for_scale(sigma_scale);
  return m;
}

ModelSpec linear_model(std::size_t dim, double delay, double a, std::vector<double> c, double sigma_scale) {
  if (c.size() != dim) throw ConfigError("linear drift offset has wrong dimension");
  ModelSpec m;
  m.name = "linear";
  m.dim = dim;
  m.delay = delay;
  if (a == 0.0 && std::all_of(c.begin(), c.end(), [](double v) { return v == 0.0; })) {
    m.drift = DriftFunctional::zero(dim);
  } else {
    m.drift = DriftFunctional::split(dim, nullptr,
                                     [a, c = std::move(c)](double, std::span<const double> x, std::span<double> out) {
                                       for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + c[i];
                                     });
  }
  m.diffusion = DiffusionField::scaled_identity(dim, sigma_scale);
  m.c_sigma = c_sigma_for_scale(sigma_scale);
  m.envelopes.continuous_on_initial_window = true;
  return m;
}

ModelSpec sign_drift_model(double delay, double beta, double sigma_scale) {
  ModelSpec m;
  m.name = "sign_drift";
  m.dim = 1;
  m.delay = delay;
  m.drift = DriftFunctional::split(1, nullptr, [beta](double, std::span<const double> x, std::span<double> out) {
    out[0] = beta * sgn(x[0]);
  });
  m.diffusion = DiffusionField::scaled_identity(1, sigma_scale);
  m.c_sigma = c_sigma_for_scale(sigma_scale);
  return m;
}

ValidationReport check_ellipticity(const DiffusionField& field, std::span<const DiffusionProbe> points,
                                   double c_sigma) {
  if (points.empty()) throw DomainError("ellipticity check needs at least one probe point");
  ValidationReport report;
  report.min_value = std::numeric_limits<double>::infinity();
  report.max_value = -std::numeric_limits<double>::infinity();
  Matrix sigma;
  for (const auto& p : points) {
    ++report.points_checked;
    field.evaluate(p.t, p.x, sigma);
    if (!sigma.allFinite()) {
      ++report.evaluation_errors;
      report.messages.push_back("non-finite sigma at t=" + format_double(p.t));
      continue;
    }
    const Matrix a = sigma * sigma.transpose();
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(a, Eigen::EigenvaluesOnly);
    report.min_value = std::min(report.min_value, eig.eigenvalues().minCoeff());
    report.max_value = std::max(report.max_value, eig.eigenvalues().maxCoeff());
  }
  report.passed = report.evaluation_errors == 0 && report.min_value >= 1.0 / c_sigma - kValidationTolerance &&
                  report.max_value <= c_sigma + kValidationTolerance;
  if (!report.passed && report.evaluation_errors == 0)
    report.messages.push_back("eigenvalues of sigma sigma^T in [" + format_double(report.min_value) + ", " +
                              format_double(report.max_value) + "] exceed [1/C_sigma, C_sigma]");
  return report;
}

ValidationReport check_lipschitz(const DiffusionField& field, std::span<const DiffusionPairProbe> pairs,
                                 double c_sigma) {
  if (pairs.empty()) throw DomainError("Lipschitz check needs at least one point pair");
  ValidationReport report;
  report.min_value = std::numeric_limits<double>::infinity();
  report.max_value = 0.0;
  Matrix sx;
  Matrix sy;
  for (const auto& p : pairs) {
    if (p.x.size() != p.y.size()) throw DomainError("point pair dimensions differ");
    double dist2 = 0.0;
    for (std::size_t i = 0; i < p.x.size(); ++i) dist2 += (p.x[i] - p.y[i]) * (p.x[i] - p.y[i]);
    if (dist2 == 0.0) throw DomainError("Lipschitz check requires x != y");
    ++report.points_checked;
    field.evaluate(p.t, p.x, sx);
    field.evaluate(p.t, p.y, sy);
    if (!sx.allFinite() || !sy.allFinite()) {
      ++report.evaluation_errors;
      report.messages.push_back("non-finite sigma at t=" + format_double(p.t));
      continue;
    }
    const double quotient = (sx - sy).norm() / std::sqrt(dist2);  // Frobenius == Hilbert-Schmidt
    report.min_value = std::min(report.min_value, quotient);
    report.max_value = std::max(report.max_value, quotient);
  }
  report.passed = report.evaluation_errors == 0 && report.max_value <= c_sigma + kValidationTolerance;
  if (!report.passed && report.evaluation_errors == 0)
    report.messages.push_back("difference quotient " + format_double(report.max_value) + " exceeds C_sigma");
  return report;
}

ValidationReport check_drift_envelope(const ModelSpec& model, std::span<const SamplePath> probes) {
  const auto& env = model.envelopes;
  if (!env.F || !env.C1 || !env.C2) throw ConfigError("drift envelope check needs declared F, C1 and C2");
  ValidationReport report;
  report.min_value = std::numeric_limits<double>::infinity();
  report.max_value = -std::numeric_limits<double>::infinity();
  report.passed = true;
  std::vector<double> b(model.dim);
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const auto& path = probes[p];
    if (path.dim() != model.dim) throw DomainError("probe path dimension does not match the model");
    const auto& grid = path.grid();
    const double h = grid.step();
    double lhs = 0.0;
    double f_integral = 0.0;
    double sup2 = 0.0;
    for (std::size_t node = 0; node <= grid.n_pre(); ++node) {
      const double n = euclidean_norm(path.state(node));
      sup2 = std::max(sup2, n * n);
    }
    for (std::size_t k = 0; k <= grid.n_main(); ++k) {
      const std::size_t node = grid.n_pre() + k;
      if (k > 0) {
        const double n = euclidean_norm(path.state(node));
        sup2 = std::max(sup2, n * n);
      }
      const double rhs = f_integral + *env.C1 * sup2 + *env.C2;
      ++report.points_checked;
      if (!std::isfinite(lhs) || !std::isfinite(rhs)) {
        ++report.evaluation_errors;
        report.passed = false;
        break;
      }
      const double slack = rhs - lhs;
      report.min_value = std::min(report.min_value, slack);
      report.max_value = std::max(report.max_value, slack);
      if (lhs > rhs + kValidationTolerance * std::max(1.0, std::abs(rhs))) {
        report.passed = false;
        report.messages.push_back("probe " + std::to_string(p) + ": envelope violated at t=" +
                                  format_double(grid.time(node)));
        break;
      }
      if (k == grid.n_main()) break;
      // Left-point rule on [t_k, t_{k+1}], matching the explicit scheme.
      const double t = grid.time(node);
      model.drift.evaluate(t, path.segment_view(node), b);
      const double nb = euclidean_norm(b);
      lhs += nb * nb * h;
      f_integral += std::abs(env.F(t, path.state(node))) * h;
    }
  }
  return report;
}

}  // namespace sdde
