#include "ganorcon/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace ganorcon {

int num_threads() {
  static int cached = [] {
    if (const char* env = std::getenv("GANORCON_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return std::min(v, 64);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::clamp(hw, 1u, 16u));
  }();
  return cached;
}

int range_count(int64_t n) {
  if (n <= 1) return n <= 0 ? 0 : 1;
  // Fixed fan-out independent of the worker count keeps reductions stable.
  return static_cast<int>(std::min<int64_t>(n, 16));
}

int parallel_ranges(int64_t n, const std::function<void(int, int64_t, int64_t)>& fn) {
  int ranges = range_count(n);
  if (ranges == 0) return 0;
  int workers = std::min(num_threads(), ranges);
  if (n < 256) workers = 1;  // skip thread spawn for tiny loops
  if (workers <= 1) {
    for (int r = 0; r < ranges; ++r) {
      int64_t b = n * r / ranges;
      int64_t e = n * (r + 1) / ranges;
      if (b < e) fn(r, b, e);
    }
    return ranges;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      int r = next.fetch_add(1);
      if (r >= ranges) return;
      int64_t b = n * r / ranges;
      int64_t e = n * (r + 1) / ranges;
      if (b < e) fn(r, b, e);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers - 1));
  for (int i = 1; i < workers; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return ranges;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  parallel_ranges(n, [&](int, int64_t b, int64_t e) { fn(b, e); });
}

}  // namespace ganorcon
