#include "avdnet/parallel.hpp"

#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace avdnet {
namespace {

class Pool {
 public:
  explicit Pool(std::size_t workers) : workers_(workers) {
    for (std::size_t w = 1; w < workers_; ++w)
      threads_.emplace_back([this, w] { worker_loop(w); });
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    std::size_t parts = std::min(workers_, n);
    if (parts <= 1 || nested_) {
      fn(0, n);
      return;
    }
    {
      std::lock_guard<std::mutex> lk(mu_);
      task_ = &fn;
      task_n_ = n;
      task_parts_ = parts;
      pending_ = workers_ - 1;  // every background worker checks in once
      ++generation_;
    }
    cv_.notify_all();
    nested_ = true;
    run_chunk(0);
    nested_ = false;
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    task_ = nullptr;
  }

  static thread_local bool nested_;

 private:
  void run_chunk(std::size_t part) {
    std::size_t lo = task_n_ * part / task_parts_;
    std::size_t hi = task_n_ * (part + 1) / task_parts_;
    if (lo < hi) (*task_)(lo, hi);
  }

  void worker_loop(std::size_t id) {
    std::size_t seen = 0;
    for (;;) {
      std::unique_lock<std::mutex> lk(mu_);
      cv_.wait(lk, [&] { return generation_ != seen; });
      seen = generation_;
      if (stop_) return;
      if (id >= task_parts_) {
        if (--pending_ == 0) done_cv_.notify_one();
        continue;
      }
      lk.unlock();
      nested_ = true;
      run_chunk(id);
      nested_ = false;
      lk.lock();
      if (--pending_ == 0) done_cv_.notify_one();
    }
  }

  std::size_t workers_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(std::size_t, std::size_t)>* task_ = nullptr;
  std::size_t task_n_ = 0, task_parts_ = 0, pending_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
};

thread_local bool Pool::nested_ = false;

std::size_t detect_workers() {
  if (const char* env = std::getenv("AVDNET_THREADS")) {
    long v = std::atol(env);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? hc : 1;
}

Pool& pool() {
  static Pool p(detect_workers());
  return p;
}

}  // namespace

std::size_t worker_count() {
  static std::size_t n = detect_workers();
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& chunk_fn) {
  pool().run(n, chunk_fn);
}

}  // namespace avdnet
