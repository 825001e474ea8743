#pragma once

#include <cstddef>
#include <exception>

namespace placekit {

/// Runs fn(i) for i in [0, n), in parallel when OpenMP is enabled. The first
/// exception thrown by any iteration is rethrown after the loop.
template <class Fn> void parallel_for(std::size_t n, Fn &&fn) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(placekit_parallel_error)
      if (!error)
        error = std::current_exception();
    }
  }
  if (error)
    std::rethrow_exception(error);
}

/// Caps the worker count (0 keeps the default).
void set_thread_limit(int threads);

} // namespace placekit
