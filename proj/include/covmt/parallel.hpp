#pragma once

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace covmt {

/// Number of workers to actually use: 0 means "all logical cores".
inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/**
 * Run fn(i) for i in [0, n) across a fixed number of threads using a static
 * block partition. Work items must write to disjoint state; because the
 * partition depends only on (n, workers) and items are independent, results
 * are identical for any worker count. The first exception thrown by any
 * worker is rethrown on the calling thread.
 */
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = resolve_workers(workers);
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  if (workers > n) workers = n;

  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex error_mutex;

  const int base = n / workers;
  const int extra = n % workers;
  int start = 0;
  for (int w = 0; w < workers; ++w) {
    const int len = base + (w < extra ? 1 : 0);
    const int lo = start;
    const int hi = start + len;
    start = hi;
    pool.emplace_back([&, lo, hi] {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace covmt
