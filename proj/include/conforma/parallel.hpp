#pragma once

#include <atomic>
#include <exception>

namespace conforma {

/// Number of OpenMP threads that a parallel region would use (1 when built
/// without OpenMP).
int max_threads();

/// Set the OpenMP thread count; n <= 0 leaves the runtime default in place.
void set_threads(int n);

/// Parallel loop over [0, n) with exception transport: OpenMP terminates on
/// exceptions that cross a region boundary, so the first one is captured
/// and rethrown after the loop. Bodies write only to their own slots, which
/// keeps results independent of the schedule.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  std::exception_ptr error;
  std::atomic<bool> failed{false};
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    if (failed.load(std::memory_order_relaxed)) continue;
    try {
      fn(i);
    } catch (...) {
#pragma omp critical(conforma_parallel_for_error)
      {
        if (!error) error = std::current_exception();
      }
      failed.store(true, std::memory_order_relaxed);
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace conforma
