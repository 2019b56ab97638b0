#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace gaitspeed {

/// Upper bound on worker threads: GAITSPEED_THREADS caps the request,
/// hardware concurrency caps everything.
inline int effective_threads(int requested) {
  int cap = static_cast<int>(std::thread::hardware_concurrency());
  if (cap <= 0) cap = 1;
  if (const char* env = std::getenv("GAITSPEED_THREADS")) {
    const int e = std::atoi(env);
    if (e >= 1) cap = std::min(cap, e);
  }
  return std::max(1, std::min(requested, cap));
}

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; callers
/// that need determinism must make fn(i) independent of scheduling (write to
/// slot i only), which every call site in this library does.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  threads = effective_threads(threads);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    const std::size_t lo = n * t / nt;
    const std::size_t hi = n * (t + 1) / nt;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace gaitspeed
