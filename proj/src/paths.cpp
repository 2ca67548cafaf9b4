#include "sdde/paths.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "sdde/errors.hpp"
#include "sdde/rng.hpp"

namespace sdde {

namespace {

constexpr double kGridTolerance = 1e-9;

}  // namespace

std::optional<std::size_t> whole_steps(double length, double h) {
  if (!(h > 0.0) || !std::isfinite(length) || length < 0.0) return std::nullopt;
  const double ratio = length / h;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > kGridTolerance * std::max(1.0, ratio)) return std::nullopt;
  return static_cast<std::size_t>(rounded);
}

TimeGrid TimeGrid::make(double r, double horizon, double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw DomainError("step h must be positive and finite");
  if (!(r > 0.0)) throw DomainError("delay r must be positive");
  if (!(horizon >= 0.0)) throw DomainError("horizon T must be nonnegative");
  const auto n_pre = whole_steps(r, h);
  if (!n_pre) throw DomainError("r not an integer multiple of h");
  const auto n_main = whole_steps(horizon, h);
  if (!n_main) throw DomainError("T not an integer multiple of h");
  return TimeGrid(h, *n_pre, *n_main);
}

std::optional<std::size_t> TimeGrid::try_node_of(double t) const {
  const auto k = whole_steps(t + delay(), h_);
  if (!k || *k >= n_nodes()) return std::nullopt;
  return k;
}

std::size_t TimeGrid::node_of(double t) const {
  const auto k = try_node_of(t);
  if (!k) throw DomainError("time " + format_double(t) + " is not a grid node of [-r, T]");
  return *k;
}

std::size_t SegmentView::node_at_lag(double s) const {
  const auto k = whole_steps(s + delay(), h_);
  if (!k || *k > n_pre()) throw DomainError("lag " + format_double(s) + " is not a grid node of [-r, 0]");
  return *k;
}

PathSegment::PathSegment(std::vector<double> values, std::size_t dim, double h)
    : values_(std::move(values)), dim_(dim), h_(h) {
  if (dim_ == 0) throw DomainError("segment dimension must be >= 1");
  if (values_.empty() || values_.size() % dim_ != 0) throw DomainError("segment size is not a multiple of d");
  if (!std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); }))
    throw DomainError("segment has non-finite entries");
}

PathSegment PathSegment::constant(const TimeGrid& grid, std::vector<double> value) {
  const std::size_t dim = value.size();
  std::vector<double> values;
  values.reserve((grid.n_pre() + 1) * dim);
  for (std::size_t j = 0; j <= grid.n_pre(); ++j) values.insert(values.end(), value.begin(), value.end());
  return PathSegment(std::move(values), dim, grid.step());
}

PathSegment PathSegment::from_function(const TimeGrid& grid, std::size_t dim,
                                       const std::function<std::vector<double>(double)>& fn) {
  std::vector<double> values;
  values.reserve((grid.n_pre() + 1) * dim);
  for (std::size_t j = 0; j <= grid.n_pre(); ++j) {
    const auto v = fn(grid.time(j));
    if (v.size() != dim) throw DomainError("segment function returned wrong dimension");
    values.insert(values.end(), v.begin(), v.end());
  }
  return PathSegment(std::move(values), dim, grid.step());
}

SamplePath::SamplePath(TimeGrid grid, std::size_t dim, std::vector<double> states, std::vector<double> increments)
    : grid_(grid), dim_(dim), states_(std::move(states)), increments_(std::move(increments)) {
  if (dim_ == 0) throw DomainError("path dimension must be >= 1");
  if (states_.size() != grid_.n_nodes() * dim_) throw DomainError("path state count does not match the grid");
  if (increments_.size() != grid_.n_main() * dim_) throw DomainError("increment count does not match n_main");
}

SegmentView SamplePath::segment_view(std::size_t node) const {
  const std::size_t n_pre = grid_.n_pre();
  if (node < n_pre || node >= grid_.n_nodes()) throw DomainError("segment node outside [0, T]");
  const auto first = (node - n_pre) * dim_;
  return {std::span<const double>(states_).subspan(first, (n_pre + 1) * dim_), dim_, grid_.step()};
}

PathSegment segment_at(const SamplePath& path, double t) {
  const auto node = path.grid().try_node_of(t);
  if (!node || *node < path.grid().n_pre()) throw DomainError("segment time " + format_double(t) + " is off-grid or outside [0, T]");
  const auto view = path.segment_view(*node);
  return PathSegment(std::vector<double>(view.values().begin(), view.values().end()), path.dim(),
                     path.grid().step());
}

double euclidean_norm(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  return std::sqrt(sum);
}

double sup_norm(SegmentView seg) {
  double best = 0.0;
  for (std::size_t j = 0; j < seg.size(); ++j) best = std::max(best, euclidean_norm(seg.state(j)));
  return best;
}

std::vector<double> interpolate(const SamplePath& path, double t) {
  const auto& grid = path.grid();
  const double lo = -grid.delay();
  const double hi = grid.horizon();
  if (!(t >= lo && t <= hi)) throw DomainError("interpolation time outside [-r, T]");
  if (const auto node = grid.try_node_of(t)) {
    const auto s = path.state(*node);
    return {s.begin(), s.end()};
  }
  const double pos = (t - lo) / grid.step();
  const auto left = std::min(static_cast<std::size_t>(std::floor(pos)), grid.n_nodes() - 2);
  const double w = pos - static_cast<double>(left);
  const auto a = path.state(left);
  const auto b = path.state(left + 1);
  std::vector<double> out(path.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - w) * a[i] + w * b[i];
  return out;
}

std::vector<double> BrownianDriver::increments() const {
  const NormalStream normals(seed_, replicate_);
  const double scale = std::sqrt(grid_.step());
  const std::size_t count = grid_.n_main() * dim_;
  std::vector<double> out(count);
  for (std::size_t i = 0; i + 1 < count; i += 2) {
    const auto pair = normals.normal_pair(i / 2);
    out[i] = scale * pair[0];
    out[i + 1] = scale * pair[1];
  }
  if (count % 2 == 1) out[count - 1] = scale * normals.at(count - 1);
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_path_csv(std::ostream& os, const SamplePath& path) {
  const auto& grid = path.grid();
  const std::size_t d = path.dim();
  os << 't';
  for (std::size_t i = 1; i <= d; ++i) os << ",x_" << i;
  for (std::size_t i = 1; i <= d; ++i) os << ",dW_" << i;
  os << '\n';
  for (std::size_t node = 0; node < grid.n_nodes(); ++node) {
    os << format_double(grid.time(node));
    for (double x : path.state(node)) os << ',' << format_double(x);
    if (node > grid.n_pre()) {
      for (double dw : path.increment(node - grid.n_pre() - 1)) os << ',' << format_double(dw);
    } else {
      for (std::size_t i = 0; i < d; ++i) os << ',';
    }
    os << '\n';
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

SamplePath read_path_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DomainError("empty path CSV");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "t" || (header.size() - 1) % 2 != 0)
    throw DomainError("malformed path CSV header");
  const std::size_t d = (header.size() - 1) / 2;

  std::vector<double> times;
  std::vector<double> states;
  std::vector<double> increments;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 1 + 2 * d) throw DomainError("malformed path CSV row");
    times.push_back(std::stod(cells[0]));
    for (std::size_t i = 0; i < d; ++i) states.push_back(std::stod(cells[1 + i]));
    if (!cells[1 + d].empty())
      for (std::size_t i = 0; i < d; ++i) increments.push_back(std::stod(cells[1 + d + i]));
  }
  if (times.size() < 2) throw DomainError("path CSV needs at least two rows");
  const double h = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  const auto grid = TimeGrid::make(-times.front(), times.back(), h);
  return SamplePath(grid, d, std::move(states), std::move(increments));
}

}  // namespace sdde
