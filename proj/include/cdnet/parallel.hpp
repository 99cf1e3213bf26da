#pragma once

#include <cstdint>
#include <exception>

namespace cdnet {

// Execution policy for per-sample kernels. kSerial is the reference path
// the tests compare the OpenMP path against; both produce identical results
// because every iteration writes only its own slot and reductions run in
// index order afterwards.
enum class Exec { kSerial, kParallel };

template <typename Fn>
void for_each_index(std::int64_t n, Exec exec, Fn&& fn) {
  if (exec == Exec::kSerial) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  // Exceptions may not cross the OpenMP region; the lowest failing index wins.
  std::exception_ptr first;
  std::int64_t first_index = n;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
#pragma omp critical(cdnet_for_each_index)
      if (i < first_index) {
        first_index = i;
        first = std::current_exception();
      }
    }
  }
  if (first) std::rethrow_exception(first);
}

int max_threads();

}  // namespace cdnet
