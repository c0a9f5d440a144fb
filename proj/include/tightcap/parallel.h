#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace tightcap {

// Worker cap: TIGHTCAP_THREADS if set, else hardware concurrency.
inline int worker_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TIGHTCAP_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(std::max(n, 1), cap);
  }
  return std::max(n, 1);
}

// Static contiguous partition of [0, n); each index is visited exactly once,
// so bodies that write only to slot i stay deterministic.
template <typename Fn>
void parallel_for(int n, Fn&& body) {
  const int workers = std::min(worker_count(), std::max(n / 256, 1));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const int begin = static_cast<int>(static_cast<long>(n) * w / workers);
    const int end = static_cast<int>(static_cast<long>(n) * (w + 1) / workers);
    pool.emplace_back([begin, end, &body] {
      for (int i = begin; i < end; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace tightcap
