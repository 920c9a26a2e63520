#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace mvseg {

// Runs fn(begin, end) over disjoint chunks of [0, n) on worker threads. Chunk
// results must not depend on chunk boundaries; callers keep any per-element
// reduction order fixed so outputs stay bit-identical at any thread count.
template <typename Fn>
void parallel_chunks(std::size_t n, Fn&& fn, unsigned max_threads = 0) {
  if (n == 0) return;
  unsigned hw = max_threads ? max_threads : std::thread::hardware_concurrency();
  hw = std::max(1u, std::min<unsigned>(hw, 64));
  const std::size_t chunk = std::max<std::size_t>(1, (n + hw - 1) / hw);
  std::vector<std::thread> workers;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    workers.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : workers) t.join();
}

}  // namespace mvseg
