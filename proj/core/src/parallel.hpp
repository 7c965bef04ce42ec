#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace sparsefront::detail {

/// Runs fn(i) for i in [0, count) over `workers` threads in contiguous
/// blocks. Callers write results into per-index slots and reduce in index
/// order, so the outcome does not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
  workers = std::max(1u, workers);
  if (workers == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t n_threads = std::min<std::size_t>(workers, count);
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(n_threads);
  const std::size_t block = (count + n_threads - 1) / n_threads;
  for (std::size_t t = 0; t < n_threads; ++t) {
    threads.emplace_back([&, t] {
      try {
        const std::size_t begin = t * block;
        const std::size_t end = std::min(count, begin + block);
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace sparsefront::detail
