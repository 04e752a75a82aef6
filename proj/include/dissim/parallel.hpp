#ifndef DISSIM_PARALLEL_HPP_
#define DISSIM_PARALLEL_HPP_

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dissim {

/* Runs fn(i) for i in [0, n) across at most `threads` workers on disjoint
 * contiguous ranges. Callers write results into preallocated per-index
 * slots and reduce sequentially afterwards, so the outcome is identical
 * for every worker count. The first worker exception is rethrown here. */
inline void parallel_for(size_t n, unsigned threads, const std::function<void(size_t)>& fn) {
  if (n == 0) return;
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  unsigned workers = std::min<unsigned>(std::max(1u, threads == 0 ? hw : threads),
                                        static_cast<unsigned>(std::min<size_t>(n, 256)));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  size_t chunk = (n + workers - 1) / workers;
  for (unsigned t = 0; t < workers; ++t) {
    size_t lo = static_cast<size_t>(t) * chunk;
    size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn, &first_error, &error_mutex] {
      try {
        for (size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace dissim

#endif  // DISSIM_PARALLEL_HPP_
