#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace sdde {

/// Worker count used when the caller passes 0: the number of available cores.
std::size_t default_workers();

/// Runs body(i) for i in [0, n) on `workers` threads. Each index runs exactly once;
/// the first exception thrown by any body is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& body);

/// Fixed-order pairwise sum: the result depends only on the order of `values`.
double pairwise_sum(std::span<const double> values);

/// Mean and standard error of the mean, both from pairwise sums.
struct SampleMoments {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
};
SampleMoments sample_moments(std::span<const double> values);

}  // namespace sdde
