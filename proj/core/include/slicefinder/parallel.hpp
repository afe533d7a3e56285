#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace slicefinder {

// Runs fn(i) for i in [0, n) on `workers` threads pulling indices from a
// shared counter. Results must be written index-keyed by fn, so completion
// order never matters. The first exception is rethrown after all threads
// join. When `cancel` becomes true, no further indices are started.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn &&fn,
                  const std::atomic<bool> *cancel = nullptr) {
  const auto width = static_cast<std::size_t>(std::max(1, workers));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (;;) {
      if (cancel != nullptr && cancel->load(std::memory_order_relaxed)) return;
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n, std::memory_order_relaxed);
      }
    }
  };

  if (width == 1 || n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(std::min(width, n));
    for (std::size_t t = 0; t < std::min(width, n); ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace slicefinder
