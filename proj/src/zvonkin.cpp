#include "sdde/zvonkin.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>

#include "sdde/errors.hpp"
#include "sdde/parallel.hpp"

namespace sdde {

PdeGrid PdeGrid::make(double half_width, double dx, double start, double end, double dt) {
  if (!(half_width > 0.0)) throw DomainError("PDE half-width L must be positive");
  if (!(dx > 0.0) || !(dt > 0.0)) throw DomainError("PDE steps must be positive");
  if (!(end > start)) throw DomainError("PDE window needs S < T");
  const auto nx = whole_steps(2.0 * half_width, dx);
  if (!nx) throw DomainError("2L is not an integer multiple of dx");
  if (*nx < 4) throw DomainError("PDE grid needs at least 4 space intervals");
  const auto nt = whole_steps(end - start, dt);
  if (!nt || *nt == 0) throw DomainError("T - S is not an integer multiple of dt");
  PdeGrid g;
  g.half_width_ = half_width;
  g.dx_ = dx;
  g.start_ = start;
  g.end_ = end;
  g.dt_ = dt;
  g.nx_ = *nx;
  g.nt_ = *nt;
  return g;
}

PdeSolution::PdeSolution(PdeGrid grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
  if (values_.size() != (grid_.nt() + 1) * (grid_.nx() + 1)) throw DomainError("PDE values do not match the grid");
}

double PdeSolution::slope(std::size_t j, std::size_t i) const {
  const std::size_t n = grid_.nx();
  if (i == 0) return (value(j, 1) - value(j, 0)) / grid_.dx();
  if (i == n) return (value(j, n) - value(j, n - 1)) / grid_.dx();
  return (value(j, i + 1) - value(j, i - 1)) / (2.0 * grid_.dx());
}

namespace {

struct Bracket {
  std::size_t lo;
  double w;
};

Bracket bracket(double pos, std::size_t n) {
  const double clamped = std::clamp(pos, 0.0, static_cast<double>(n));
  const auto lo = std::min(static_cast<std::size_t>(std::floor(clamped)), n - 1);
  return {lo, clamped - static_cast<double>(lo)};
}

template <class Read>
double bilinear(const PdeGrid& g, double t, double x, Read read) {
  if (!(x >= -g.half_width() - 1e-12 && x <= g.half_width() + 1e-12)) throw DomainError("x outside [-L, L]");
  if (!(t >= g.start() - 1e-12 && t <= g.end() + 1e-12)) throw DomainError("t outside [S, T]");
  const auto bx = bracket((x + g.half_width()) / g.dx(), g.nx());
  const auto bt = bracket((t - g.start()) / g.dt(), g.nt());
  const double v00 = read(bt.lo, bx.lo);
  const double v01 = read(bt.lo, bx.lo + 1);
  const double v10 = read(bt.lo + 1, bx.lo);
  const double v11 = read(bt.lo + 1, bx.lo + 1);
  const double lower = (1.0 - bx.w) * v00 + bx.w * v01;
  const double upper = (1.0 - bx.w) * v10 + bx.w * v11;
  return (1.0 - bt.w) * lower + bt.w * upper;
}

// Called with each time level from T downwards; returning false stops the march.
using LevelSink = std::function<bool(std::size_t, std::span<const double>)>;

// Returns false when the sink stopped the march early.
bool march(const ScalarField& sigma, const ScalarField& b, const PdeGrid& grid, const LevelSink& sink) {
  const std::size_t n = grid.nx();
  const std::size_t m = n - 1;  // interior unknowns 1..n-1
  const double dx = grid.dx();
  const double dt = grid.dt();
  std::vector<double> next(n + 1, 0.0);
  std::vector<double> row(n + 1, 0.0);
  std::vector<double> lower(m), diag(m), upper(m), rhs(m), cprime(m), dprime(m);

  if (!sink(grid.nt(), next)) return false;

  for (std::size_t jj = grid.nt(); jj-- > 0;) {
    const double t = grid.t(jj);
    for (std::size_t i = 1; i < n; ++i) {
      const double x = grid.x(i);
      const double s = sigma(t, x);
      const double bi = b(t, x);
      const double diff = dt * 0.5 * s * s / (dx * dx);
      const double adv = dt * std::abs(bi) / dx;
      const double a = diff + (bi < 0.0 ? adv : 0.0);
      const double c = diff + (bi > 0.0 ? adv : 0.0);
      lower[i - 1] = -a;
      diag[i - 1] = 1.0 + a + c;
      upper[i - 1] = -c;
      rhs[i - 1] = next[i] + dt * bi;
    }
    // u_0 = 2 u_1 - u_2 and u_n = 2 u_{n-1} - u_{n-2}.
    diag[0] += 2.0 * lower[0];
    upper[0] -= lower[0];
    lower[0] = 0.0;
    diag[m - 1] += 2.0 * upper[m - 1];
    lower[m - 1] -= upper[m - 1];
    upper[m - 1] = 0.0;

    // Thomas algorithm.
    for (std::size_t i = 0; i < m; ++i) {
      const double pivot = diag[i] - (i > 0 ? lower[i] * cprime[i - 1] : 0.0);
      if (!std::isfinite(pivot) || std::abs(pivot) < 1e-300)
        throw NumericalError("singular tridiagonal system in backward PDE solve");
      cprime[i] = upper[i] / pivot;
      dprime[i] = (rhs[i] - (i > 0 ? lower[i] * dprime[i - 1] : 0.0)) / pivot;
    }
    row[m] = dprime[m - 1];
    for (std::size_t i = m - 1; i-- > 0;) row[i + 1] = dprime[i] - cprime[i] * row[i + 2];
    row[0] = 2.0 * row[1] - row[2];
    row[n] = 2.0 * row[n - 1] - row[n - 2];
    for (std::size_t i = 0; i <= n; ++i)
      if (!std::isfinite(row[i])) throw NumericalError("non-finite value in backward PDE solve");

    if (!sink(jj, row)) return false;
    std::swap(next, row);
  }
  return true;
}

double row_gradient(std::span<const double> row, double dx) {
  double best = 0.0;
  for (std::size_t i = 1; i + 1 < row.size(); ++i) best = std::max(best, std::abs(row[i + 1] - row[i - 1]) / (2.0 * dx));
  return best;
}

}  // namespace

double PdeSolution::at(double t, double x) const {
  return bilinear(grid_, t, x, [this](std::size_t j, std::size_t i) { return value(j, i); });
}

double PdeSolution::slope_at(double t, double x) const {
  return bilinear(grid_, t, x, [this](std::size_t j, std::size_t i) { return slope(j, i); });
}

PdeSolution solve_backward_pde(const ScalarField& sigma, const ScalarField& b, const PdeGrid& grid) {
  const std::size_t width = grid.nx() + 1;
  std::vector<double> values((grid.nt() + 1) * width, 0.0);
  march(sigma, b, grid, [&](std::size_t j, std::span<const double> row) {
    std::copy(row.begin(), row.end(), values.begin() + static_cast<std::ptrdiff_t>(j * width));
    return true;
  });
  return PdeSolution(grid, std::move(values));
}

double gradient_bound(const PdeSolution& sol) {
  const auto& g = sol.grid();
  double best = 0.0;
  for (std::size_t j = 0; j <= g.nt(); ++j)
    best = std::max(best, row_gradient(std::span<const double>(sol.values()).subspan(j * (g.nx() + 1), g.nx() + 1),
                                       g.dx()));
  return best;
}

void write_pde_csv(std::ostream& os, const PdeSolution& sol) {
  const auto& g = sol.grid();
  os << "t,x,u\n";
  for (std::size_t j = 0; j <= g.nt(); ++j)
    for (std::size_t i = 0; i <= g.nx(); ++i)
      os << format_double(g.t(j)) << ',' << format_double(g.x(i)) << ',' << format_double(sol.value(j, i)) << '\n';
}

void to_json(nlohmann::json& j, const DeltaReport& r) {
  j = nlohmann::json{{"delta", r.delta}, {"windows_tested", r.windows_tested}, {"max_gradient", r.max_gradient}};
}

DeltaReport select_delta(const ScalarField& sigma, const ScalarField& b, double horizon, const PdeGridTemplate& tmpl,
                         std::size_t max_cover) {
  if (!(horizon > 0.0)) throw DomainError("select_delta needs a positive horizon");
  if (max_cover == 0) throw DomainError("select_delta needs at least one cover window");
  DeltaReport report;
  for (std::size_t level = 0;; ++level) {
    const double delta = horizon / std::ldexp(1.0, static_cast<int>(level));
    if (delta < 4.0 * tmpl.dt)
      throw NumericalError("contraction window fell below 4 dt; drift too singular at this resolution");
    const double windows = std::ldexp(1.0, static_cast<int>(level));
    const std::size_t count = static_cast<std::size_t>(std::min<double>(static_cast<double>(max_cover), windows));
    const auto steps = static_cast<std::size_t>(std::ceil(delta / tmpl.dt - 1e-9));
    const double dt = delta / static_cast<double>(steps);

    std::vector<DeltaWindow> certified;
    bool ok = true;
    for (std::size_t w = 0; w < count && ok; ++w) {
      const double start = count == 1 ? 0.0 : (horizon - delta) * static_cast<double>(w) / static_cast<double>(count - 1);
      const auto grid = PdeGrid::make(tmpl.half_width, tmpl.dx, start, start + delta, dt);
      double worst = 0.0;
      ++report.windows_tested;
      const bool finished = march(sigma, b, grid, [&](std::size_t, std::span<const double> row) {
        worst = std::max(worst, row_gradient(row, grid.dx()));
        return worst <= kContractionBound;
      });
      if (!finished) {
        ok = false;
        break;
      }
      certified.push_back({start, start + delta, worst});
    }
    if (ok) {
      report.delta = delta;
      report.certified = std::move(certified);
      for (const auto& w : report.certified) report.max_gradient = std::max(report.max_gradient, w.max_gradient);
      return report;
    }
  }
}

TransformedPath transform_path(const PdeSolution& sol, const SamplePath& path) {
  if (path.dim() != 1) throw DomainError("transform_path works in one dimension");
  const auto& g = sol.grid();
  const auto& grid = path.grid();
  std::vector<double> states = path.states();
  bool exited = false;
  for (std::size_t node = 0; node < grid.n_nodes(); ++node) {
    const double t = grid.time(node);
    if (t < g.start() - 1e-12 || t > g.end() + 1e-12) continue;
    const double x = states[node];
    if (std::abs(x) > g.half_width()) {
      exited = true;
      continue;
    }
    states[node] = x + sol.at(t, x);
  }
  return {SamplePath(grid, 1, std::move(states), path.increments()), exited};
}

double residual_allowance(const PdeGrid& grid, double h) {
  return kResidualAllowance * (grid.dx() + grid.dt() + std::sqrt(h));
}

ResidualReport drift_removal_residual(const ModelSpec& model, const PdeSolution& sol, const PathSegment& x0,
                                      const SolverConfig& cfg, std::size_t blocks) {
  if (model.dim != 1) throw ConfigError("drift removal residual works in one dimension");
  if (!model.drift.has_split() || model.drift.strict_past() || !model.drift.pointwise())
    throw ConfigError("drift removal residual needs a purely pointwise drift");
  cfg.validate();
  const auto& g = sol.grid();
  const auto& grid = cfg.grid;
  const double h = grid.step();
  const auto first = static_cast<std::size_t>(std::ceil(std::max(g.start(), 0.0) / h - 1e-9));
  const auto last_node = static_cast<std::size_t>(std::floor(std::min(g.end(), grid.horizon()) / h + 1e-9));
  if (last_node <= first) throw DomainError("PDE window holds no step of the path grid");
  const std::size_t steps = last_node - first;
  blocks = std::clamp<std::size_t>(blocks, 1, steps);

  const std::size_t n = cfg.replicates;
  std::vector<std::vector<double>> drifts(n);
  std::vector<unsigned char> exited(n, 0);
  parallel_for(n, cfg.workers, [&](std::size_t r) {
    const BrownianDriver driver(cfg.seed, r, grid, 1);
    const auto path = euler_maruyama(model, x0, grid, driver.increments(), cfg.drift_clip);
    const auto y = transform_path(sol, path);
    if (y.exited) {
      exited[r] = 1;
      return;
    }
    std::vector<double> per_block(blocks, 0.0);
    Matrix sigma;
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t k_begin = first + b * steps / blocks;
      const std::size_t k_end = first + (b + 1) * steps / blocks;
      double sum = 0.0;
      for (std::size_t k = k_begin; k < k_end; ++k) {
        const std::size_t node = grid.n_pre() + k;
        const double t = grid.time(node);
        const double x = path.state(node)[0];
        model.diffusion.evaluate(t, path.state(node), sigma);
        const double u_x = 1.0 + sol.slope_at(t, x);
        const double dy = y.path.state(node + 1)[0] - y.path.state(node)[0];
        sum += dy - u_x * sigma(0, 0) * path.increment(k)[0];
      }
      per_block[b] = sum / (static_cast<double>(k_end - k_begin) * h);
    }
    drifts[r] = std::move(per_block);
  });

  ResidualReport report;
  report.exited = static_cast<std::size_t>(std::count(exited.begin(), exited.end(), 1));
  report.inconclusive = static_cast<double>(report.exited) > 0.1 * static_cast<double>(n);
  report.summary.seed = cfg.seed;
  report.summary.flagged = report.exited;
  report.summary.n = n - report.exited;
  report.summary.ess = static_cast<double>(report.summary.n);
  if (report.summary.n == 0) {
    report.inconclusive = true;
    return report;
  }
  std::vector<double> column;
  column.reserve(report.summary.n);
  for (std::size_t b = 0; b < blocks; ++b) {
    column.clear();
    for (std::size_t r = 0; r < n; ++r)
      if (!exited[r]) column.push_back(drifts[r][b]);
    const auto m = sample_moments(column);
    report.block_drift.push_back(m.mean);
    report.block_stderr.push_back(m.std_error);
    if (b == 0 || std::abs(m.mean) > report.summary.estimate) {
      report.summary.estimate = std::abs(m.mean);
      report.summary.std_error = m.std_error;
    }
  }
  return report;
}

}  // namespace sdde
