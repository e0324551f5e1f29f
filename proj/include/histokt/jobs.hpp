#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace histokt {

/// Runs jobs[i]() for all i on up to `workers` threads. Jobs write into
/// pre-assigned slots, so the result is scheduling-independent. The first
/// exception (lowest job index) is rethrown after all threads join.
inline void run_parallel(const std::vector<std::function<void()>>& jobs, std::size_t workers) {
  if (jobs.empty()) return;
  workers = std::max<std::size_t>(1, std::min(workers, jobs.size()));

  if (workers == 1) {
    for (const auto& job : jobs) job();
    return;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    threads.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        try {
          jobs[i]();
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

}  // namespace histokt
