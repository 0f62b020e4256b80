#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace terrasafe {

// Number of worker threads used by parallel_for. 0 selects
// hardware_concurrency().
void set_thread_count(unsigned n) noexcept;
unsigned thread_count() noexcept;

/// Runs fn(i) for i in [0, n) over the worker pool. Iterations must write
/// to disjoint outputs; results never depend on the thread count. The first exception thrown is rethrown here.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t grain = 64) {
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(thread_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    const std::size_t chunk = std::max<std::size_t>(1, grain);
    for (;;) {
      const std::size_t begin = next.fetch_add(chunk);
      if (begin >= n) return;
      const std::size_t end = std::min(n, begin + chunk);
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace terrasafe
