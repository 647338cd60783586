#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sbglm {

/// Worker count used when a caller passes 0.
unsigned default_workers();

/// Set the process-wide default (CLI --workers). 0 restores hardware concurrency.
void set_default_workers(unsigned workers);

/// Runs body(i) for i in [0, n) on up to `workers` threads. Indices are
/// handed out in contiguous static chunks, so any per-index output written
/// into a preallocated slot is independent of scheduling. The first
/// exception thrown by a body is rethrown on the calling thread.
template <typename Body>
void parallel_for(std::size_t n, unsigned workers, Body&& body) {
  if (workers == 0) workers = default_workers();
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t nw = std::min<std::size_t>(workers, n);
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t begin = n * w / nw;
      const std::size_t end = n * (w + 1) / nw;
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace sbglm
