#include "advlab/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace advlab {

std::size_t default_thread_count() {
  if (const char* env = std::getenv("ADVLAB_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

void parallel_for(std::size_t tasks, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (tasks == 0) return;
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, tasks);
  if (workers == 1) {
    for (std::size_t i = 0; i < tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::size_t err_task = tasks;
  std::exception_ptr err;
  auto run = [&] {
    for (std::size_t i = next++; i < tasks; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (i < err_task) {
          err_task = i;
          err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  pool.clear();
  if (err) std::rethrow_exception(err);
}

}  // namespace advlab
