#include "worker_pool.hpp"

#include <stdexcept>

namespace gestinv::service {

WorkerPool::WorkerPool(std::size_t workers) {
  if (workers == 0) throw std::invalid_argument("worker pool needs at least one thread");
  threads_.reserve(workers);
  for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { run(); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    queue_.clear();
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void WorkerPool::post(Task task) {
  {
    std::lock_guard lock(mu_);
    if (stopping_) throw std::runtime_error("worker pool is shutting down");
    queue_.push_back(std::move(task));
  }
  cv_.notify_one();
}

void WorkerPool::run() {
  while (true) {
    Task task;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      task = std::move(queue_.front());
      queue_.pop_front();
    }
    task();
  }
}

}  // namespace gestinv::service
