#include "sdde/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace sdde {

std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& body) {
  if (workers == 0) workers = default_workers();
  workers = std::min(workers, std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        const std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
  }
  if (error) std::rethrow_exception(error);
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

SampleMoments sample_moments(std::span<const double> values) {
  SampleMoments m;
  m.n = values.size();
  if (m.n == 0) return m;
  m.mean = pairwise_sum(values) / static_cast<double>(m.n);
  if (m.n < 2) return m;
  std::vector<double> sq(values.size());
  std::transform(values.begin(), values.end(), sq.begin(), [&](double v) { return (v - m.mean) * (v - m.mean); });
  const double var = pairwise_sum(sq) / static_cast<double>(m.n - 1);
  m.std_error = std::sqrt(var / static_cast<double>(m.n));
  return m;
}

}  // namespace sdde
