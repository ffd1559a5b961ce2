#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace prefx {

inline unsigned resolve_threads(unsigned threads) {
  return threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
}

// Calls task(i, worker) for i in [0, count) on up to `threads` workers, which
// claim indices from a shared counter.
template <typename Task>
void run_parallel(size_t count, unsigned threads, Task&& task) {
  threads = static_cast<unsigned>(std::min<size_t>(resolve_threads(threads), std::max<size_t>(count, 1)));
  std::atomic<size_t> next{0};
  auto worker = [&](unsigned w) {
    for (size_t i = next++; i < count; i = next++) task(i, w);
  };
  if (threads <= 1) {
    worker(0);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
  for (auto& t : pool) t.join();
}

}  // namespace prefx
