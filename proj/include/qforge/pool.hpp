#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace qforge {

// Runs fn(0..n-1) on up to `jobs` worker threads and feeds the results to
// emit(i, T&&) in strictly increasing index order from the calling thread.
// If fn throws, the contiguous prefix of results before the first failing
// index is still emitted, then that exception is rethrown; results past the
// failure are dropped. This is what keeps cache/audit files ordered and
// resumable even when work runs concurrently.
template <typename T, typename Fn, typename Emit>
void parallel_for_ordered(std::size_t n, int jobs, Fn&& fn, Emit&& emit) {
  if (n == 0) return;
  if (jobs <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) emit(i, fn(i));
    return;
  }

  enum class Slot : char { pending, done, failed };
  std::vector<std::optional<T>> results(n);
  std::vector<Slot> state(n, Slot::pending);
  std::mutex mu;
  std::condition_variable cv;
  std::size_t next = 0;
  std::exception_ptr first_error;
  std::size_t first_error_index = n;
  bool stop = false;

  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lk(mu);
        if (stop || next >= n) return;
        i = next++;
      }
      try {
        T r = fn(i);
        std::lock_guard lk(mu);
        results[i] = std::move(r);
        state[i] = Slot::done;
        cv.notify_all();
      } catch (...) {
        std::lock_guard lk(mu);
        state[i] = Slot::failed;
        if (!first_error || i < first_error_index) {
          first_error = std::current_exception();
          first_error_index = i;
        }
        stop = true;  // no new claims; in-flight items still finish
        cv.notify_all();
        return;
      }
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);

  std::size_t head = 0;
  {
    std::unique_lock lk(mu);
    for (;;) {
      cv.wait(lk, [&] { return head >= n || state[head] != Slot::pending; });
      while (head < n && state[head] == Slot::done) {
        T r = std::move(*results[head]);
        results[head].reset();
        lk.unlock();
        emit(head, std::move(r));
        lk.lock();
        ++head;
      }
      if (head >= n || state[head] == Slot::failed) break;
    }
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// Counting semaphore with a runtime limit (std::counting_semaphore needs a
// compile-time ceiling). Used to bound in-flight remote requests.
class Semaphore {
 public:
  explicit Semaphore(int count) : count_(count) {}

  void acquire() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return count_ > 0; });
    --count_;
  }

  void release() {
    {
      std::lock_guard lk(mu_);
      ++count_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int count_;
};

class SemaphoreGuard {
 public:
  explicit SemaphoreGuard(Semaphore& s) : sem_(s) { sem_.acquire(); }
  ~SemaphoreGuard() { sem_.release(); }
  SemaphoreGuard(const SemaphoreGuard&) = delete;
  SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

 private:
  Semaphore& sem_;
};

}  // namespace qforge
