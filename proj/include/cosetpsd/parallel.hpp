#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cosetpsd {

inline int default_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Calls fn(k) for k in [0, count) on up to `threads` workers. Work items are
/// claimed from a shared counter; callers write results into slot k, so the
/// outcome does not depend on which worker ran which item. The first exception
/// thrown by any item is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      const std::size_t k = next.fetch_add(1);
      if (k >= count) break;
      try {
        fn(k);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Pairwise (tree) reduction of items [0, n) with `get(k)` and `add(a, b)`.
/// The association order depends only on n, so the rounding is reproducible.
template <typename T, typename Get, typename Add>
T tree_sum(std::size_t lo, std::size_t hi, Get&& get, Add&& add) {
  if (hi - lo == 1) return get(lo);
  const std::size_t mid = lo + (hi - lo) / 2;
  return add(tree_sum<T>(lo, mid, get, add), tree_sum<T>(mid, hi, get, add));
}

}  // namespace cosetpsd
