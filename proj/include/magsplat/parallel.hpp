#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace magsplat {

/// Runs fn(chunk) for chunk in [0, count) on up to `workers` threads. Chunks
/// are claimed dynamically; callers keep results per chunk and merge them in
/// chunk order so the outcome does not depend on the worker count.
template <typename Fn>
void parallel_for_chunks(int count, int workers, Fn&& fn) {
  workers = std::clamp(workers, 1, std::max(1, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto body = [&] {
    for (int i = next++; i < count; i = next++) fn(i);
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
}

}  // namespace magsplat
