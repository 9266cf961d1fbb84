#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace mel {

// Global worker count used by the block-parallel loops. 0 = hardware default.
void set_thread_count(int n);
int thread_count();

// Runs fn(block) for block = 0..n_blocks-1 on a pool of worker threads.
// Results must be written to per-block storage by the caller; reductions
// over that storage then happen in block order, so the outcome does not
// depend on the number of workers.
void parallel_for_blocks(int n_blocks, const std::function<void(int)>& fn);

// Block-wise sum reduction with a fixed, worker-independent combination
// order (sequential over block index).
double parallel_reduce_blocks(int n_blocks,
                              const std::function<double(int)>& block_sum);

namespace detail {
inline std::atomic<int>& thread_count_storage() {
  static std::atomic<int> n{0};
  return n;
}
}  // namespace detail

inline void set_thread_count(int n) { detail::thread_count_storage() = n; }

inline int thread_count() {
  int n = detail::thread_count_storage().load();
  if (n <= 0) {
    unsigned hw = std::thread::hardware_concurrency();
    n = hw == 0 ? 1 : static_cast<int>(hw);
  }
  return n;
}

inline void parallel_for_blocks(int n_blocks,
                                const std::function<void(int)>& fn) {
  int workers = std::min(thread_count(), n_blocks);
  if (workers <= 1) {
    for (int b = 0; b < n_blocks; ++b) fn(b);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int wkr = 0; wkr < workers; ++wkr) {
    pool.emplace_back([&]() {
      for (;;) {
        int b = next.fetch_add(1);
        if (b >= n_blocks) return;
        fn(b);
      }
    });
  }
  for (auto& th : pool) th.join();
}

inline double parallel_reduce_blocks(
    int n_blocks, const std::function<double(int)>& block_sum) {
  std::vector<double> partial(n_blocks, 0.0);
  parallel_for_blocks(n_blocks, [&](int b) { partial[b] = block_sum(b); });
  double total = 0.0;
  for (int b = 0; b < n_blocks; ++b) total += partial[b];
  return total;
}

}  // namespace mel
