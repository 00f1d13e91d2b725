#pragma once

// Minimal worker pool for independent tasks. Results land in per-index
// slots, so the caller's reduction order never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace phasehop {

/// PHASEHOP_THREADS if set to a positive integer, else 0.
inline int thread_cap() {
  if (const char* env = std::getenv("PHASEHOP_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) return cap;
    } catch (const std::exception&) {
    }
  }
  return 0;
}

/// Worker count: hardware concurrency, capped by PHASEHOP_THREADS.
inline int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  const int cap = thread_cap();
  return cap > 0 ? std::min(cap, hw) : hw;
}

/// Calls fn(i) for i in [0, n). Exceptions escaping fn are rethrown after
/// all workers finish (first one wins).
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, int threads = 0) {
  if (threads <= 0) threads = worker_count();
  if (const int cap = thread_cap(); cap > 0) threads = std::min(threads, cap);
  threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_lock;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> g(failure_lock);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// Pairwise sum over a fixed binary tree; the result depends only on the
/// values and their order.
template <class T, class Get>
T pairwise_sum(std::size_t begin, std::size_t end, Get&& get) {
  if (end - begin == 0) return T{};
  if (end - begin == 1) return get(begin);
  if (end - begin <= 8) {
    T acc = get(begin);
    for (std::size_t i = begin + 1; i < end; ++i) acc = acc + get(i);
    return acc;
  }
  const std::size_t mid = begin + (end - begin) / 2;
  return pairwise_sum<T>(begin, mid, get) + pairwise_sum<T>(mid, end, get);
}

}  // namespace phasehop
