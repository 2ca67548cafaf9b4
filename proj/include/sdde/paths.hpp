#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sdde {

/// Uniform grid on [-r, T] with r and T exact multiples of the step h.
class TimeGrid {
 public:
  /// Throws DomainError unless h > 0, r > 0, T >= 0 and r/h, T/h are integers.
  static TimeGrid make(double r, double horizon, double h);

  double delay() const { return h_ * static_cast<double>(n_pre_); }
  double horizon() const { return h_ * static_cast<double>(n_main_); }
  double step() const { return h_; }
  std::size_t n_pre() const { return n_pre_; }
  std::size_t n_main() const { return n_main_; }
  std::size_t n_nodes() const { return n_pre_ + n_main_ + 1; }

  /// Time of a node; node 0 is -r, node n_pre is 0.
  double time(std::size_t node) const {
    return h_ * (static_cast<double>(node) - static_cast<double>(n_pre_));
  }

  /// Node index of a time on the grid, or nullopt if off-grid or outside [-r, T].
  std::optional<std::size_t> try_node_of(double t) const;
  /// As try_node_of but throws DomainError.
  std::size_t node_of(double t) const;

  /// Same r and h, different horizon.
  TimeGrid with_horizon(double horizon) const { return make(delay(), horizon, h_); }

  bool operator==(const TimeGrid&) const = default;

 private:
  TimeGrid(double h, std::size_t n_pre, std::size_t n_main) : h_(h), n_pre_(n_pre), n_main_(n_main) {}

  double h_ = 0.0;
  std::size_t n_pre_ = 0;
  std::size_t n_main_ = 0;
};

/// Number of whole steps of size h in length, if length is (numerically) a multiple of h.
std::optional<std::size_t> whole_steps(double length, double h);

/// Non-owning view of a path segment on [-r, 0]; node j sits at s = -r + j h.
class SegmentView {
 public:
  SegmentView(std::span<const double> values, std::size_t dim, double h)
      : values_(values), dim_(dim), h_(h) {}

  std::size_t dim() const { return dim_; }
  double step() const { return h_; }
  std::size_t size() const { return values_.size() / dim_; }
  std::size_t n_pre() const { return size() - 1; }
  double delay() const { return h_ * static_cast<double>(n_pre()); }

  std::span<const double> state(std::size_t node) const { return values_.subspan(node * dim_, dim_); }
  double value(std::size_t node, std::size_t coord = 0) const { return values_[node * dim_ + coord]; }
  /// State at the current time (s = 0).
  std::span<const double> latest() const { return state(n_pre()); }
  /// Node index of the lag s in [-r, 0]; throws DomainError when off-grid.
  std::size_t node_at_lag(double s) const;
  std::span<const double> at_lag(double s) const { return state(node_at_lag(s)); }

  std::span<const double> values() const { return values_; }

 private:
  std::span<const double> values_;
  std::size_t dim_;
  double h_;
};

/// Owning path segment: an element of C([-r,0], R^d) sampled on the grid.
class PathSegment {
 public:
  /// values holds (n_pre + 1) * dim entries, node-major. Throws DomainError if sizes
  /// mismatch or any entry is non-finite.
  PathSegment(std::vector<double> values, std::size_t dim, double h);

  static PathSegment constant(const TimeGrid& grid, std::vector<double> value);
  static PathSegment from_function(const TimeGrid& grid, std::size_t dim,
                                   const std::function<std::vector<double>(double)>& fn);

  SegmentView view() const { return {values_, dim_, h_}; }
  operator SegmentView() const { return view(); }  // NOLINT(google-explicit-constructor)

  std::size_t dim() const { return dim_; }
  double step() const { return h_; }
  std::size_t size() const { return values_.size() / dim_; }
  std::span<const double> state(std::size_t node) const { return view().state(node); }
  const std::vector<double>& values() const { return values_; }

  bool operator==(const PathSegment&) const = default;

 private:
  std::vector<double> values_;
  std::size_t dim_;
  double h_;
};

/// Discrete trajectory on [-r, T] with the Brownian increments that drove it on [0, T].
class SamplePath {
 public:
  SamplePath(TimeGrid grid, std::size_t dim, std::vector<double> states, std::vector<double> increments);

  const TimeGrid& grid() const { return grid_; }
  std::size_t dim() const { return dim_; }

  std::span<const double> state(std::size_t node) const {
    return std::span<const double>(states_).subspan(node * dim_, dim_);
  }
  /// Increment dW_k driving the step from node n_pre + k to n_pre + k + 1.
  std::span<const double> increment(std::size_t k) const {
    return std::span<const double>(increments_).subspan(k * dim_, dim_);
  }
  /// Segment X_t for t = time(node); node must be >= n_pre.
  SegmentView segment_view(std::size_t node) const;

  const std::vector<double>& states() const { return states_; }
  const std::vector<double>& increments() const { return increments_; }

  /// Number of drift evaluations that hit the clip threshold while generating the path.
  std::size_t clip_events() const { return clip_events_; }
  void set_clip_events(std::size_t n) { clip_events_ = n; }

 private:
  TimeGrid grid_;
  std::size_t dim_;
  std::vector<double> states_;
  std::vector<double> increments_;
  std::size_t clip_events_ = 0;
};

/// Restriction of the path to [t - r, t], re-indexed to [-r, 0]. Throws DomainError
/// if t is off-grid or outside [0, T].
PathSegment segment_at(const SamplePath& path, double t);

/// max over nodes of the Euclidean norm of the state.
double sup_norm(SegmentView seg);
double euclidean_norm(std::span<const double> v);

/// Piecewise-linear read of the path at any t in [-r, T].
std::vector<double> interpolate(const SamplePath& path, double t);

/// Brownian increments keyed by (seed, replicate, step): same key, same bits.
class BrownianDriver {
 public:
  BrownianDriver(std::uint64_t seed, std::uint64_t replicate, TimeGrid grid, std::size_t dim)
      : seed_(seed), replicate_(replicate), grid_(grid), dim_(dim) {}

  /// n_main * dim increments, each N(0, h).
  std::vector<double> increments() const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t replicate() const { return replicate_; }
  const TimeGrid& grid() const { return grid_; }
  std::size_t dim() const { return dim_; }

 private:
  std::uint64_t seed_;
  std::uint64_t replicate_;
  TimeGrid grid_;
  std::size_t dim_;
};

// CSV layout: t, x_1..x_d, dW_1..dW_d; the row at t_{k+1} carries the increment
// dW_k that produced it, so the dW columns are empty on [-r, 0].
void write_path_csv(std::ostream& os, const SamplePath& path);
SamplePath read_path_csv(std::istream& is);

/// Decimal text with 17 significant digits.
std::string format_double(double v);

}  // namespace sdde
