#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace fedvid {

// Worker cap from FEDVID_THREADS (0 or unset = hardware concurrency). Read on
// every call so tests can vary it within one process.
inline unsigned worker_count() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("FEDVID_THREADS")) {
    const long requested = std::strtol(env, nullptr, 10);
    if (requested > 0) return static_cast<unsigned>(requested);
  }
  return hw;
}

// Runs f(i) for i in [0, n). Each invocation must only touch slot i of any
// shared output, so results are independent of scheduling.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const std::size_t workers = std::min<std::size_t>(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace fedvid
