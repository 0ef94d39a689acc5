#include "twoscale/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace twoscale {
namespace {

std::atomic<int> g_workers{0};

int env_workers() {
  const char* env = std::getenv("TS_WORKERS");
  if (env == nullptr) return 0;
  try {
    int n = std::stoi(env);
    return n > 0 ? n : 0;
  } catch (...) {
    return 0;
  }
}

}  // namespace

int default_workers() {
  int n = g_workers.load();
  if (n > 0) return n;
  n = env_workers();
  if (n > 0) return n;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_default_workers(int workers) { g_workers.store(std::max(0, workers)); }

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  int workers) {
  if (n == 0) return;
  if (workers <= 0) workers = default_workers();
  std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  if (chunks <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(chunks);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::size_t per = (n + chunks - 1) / chunks;
  for (std::size_t c = 0; c < chunks; ++c) {
    std::size_t begin = c * per;
    std::size_t end = std::min(n, begin + per);
    if (begin >= end) break;
    threads.emplace_back([&, begin, end] {
      try {
        body(begin, end);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace twoscale
