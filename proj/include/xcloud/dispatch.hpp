#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <stop_token>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "xcloud/error.hpp"

namespace xcloud {

enum class Health { Healthy, Unhealthy };

struct HealthPolicy {
  int failure_threshold = 3;  // consecutive failed probes before unhealthy
  int success_threshold = 2;  // consecutive good probes before healthy again
  std::chrono::milliseconds period{1000};
};

/// A backend executor the gateway can route work to.
class Worker {
 public:
  virtual ~Worker() = default;

  virtual const std::string& name() const = 0;

  /// One health probe; true when the worker answers OK.
  virtual bool probe() = 0;

  /// Runs `job` on this worker and returns once it has finished.
  virtual void execute(const std::function<void()>& job) = 0;
};

/// Executes jobs on the calling thread, bounded by a per-worker concurrency
/// limit. `set_serving(false)` makes its health probe fail.
class LocalWorker final : public Worker {
 public:
  explicit LocalWorker(std::string name, std::size_t max_in_flight = 64)
      : name_(std::move(name)), max_in_flight_(max_in_flight == 0 ? 1 : max_in_flight) {}

  const std::string& name() const override { return name_; }

  bool probe() override { return serving_.load(); }

  void execute(const std::function<void()>& job) override {
    {
      std::unique_lock lock(mutex_);
      slot_free_.wait(lock, [&] { return in_flight_ < max_in_flight_; });
      ++in_flight_;
    }
    struct Release {
      LocalWorker* w;
      ~Release() {
        {
          std::lock_guard lock(w->mutex_);
          --w->in_flight_;
        }
        w->slot_free_.notify_one();
      }
    } release{this};
    ++executed_;
    job();
  }

  void set_serving(bool serving) { serving_ = serving; }
  std::uint64_t executed() const { return executed_.load(); }

 private:
  std::string name_;
  std::size_t max_in_flight_;
  std::atomic<bool> serving_{true};
  std::atomic<std::uint64_t> executed_{0};
  std::mutex mutex_;
  std::condition_variable slot_free_;
  std::size_t in_flight_ = 0;
};

/// Round-robin over healthy workers with probe hysteresis.
class WorkerPool {
 public:
  explicit WorkerPool(std::vector<std::shared_ptr<Worker>> workers, HealthPolicy policy = {})
      : workers_(std::move(workers)), policy_(policy) {
    if (workers_.empty()) fail(ErrorCode::InvalidArgument, "worker pool needs at least one worker");
    state_ = std::make_unique<State[]>(workers_.size());
  }

  std::size_t size() const noexcept { return workers_.size(); }
  Worker& worker(std::size_t i) const { return *workers_.at(i); }
  const HealthPolicy& policy() const noexcept { return policy_; }

  /// Next healthy worker after the previous pick. Unhealthy workers are
  /// skipped without using up a turn.
  std::size_t dispatch() {
    const std::size_t n = workers_.size();
    std::size_t cur = cursor_.load(std::memory_order_relaxed);
    for (;;) {
      std::size_t picked = n;
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = (cur + j) % n;
        if (state_[idx].health.load() == Health::Healthy) {
          picked = idx;
          break;
        }
      }
      if (picked == n) fail(ErrorCode::NoHealthyWorker, "all " + std::to_string(n) + " workers are unhealthy");
      if (cursor_.compare_exchange_weak(cur, (picked + 1) % n)) {
        state_[picked].dispatched.fetch_add(1, std::memory_order_relaxed);
        return picked;
      }
    }
  }

  Health health(std::size_t i) const { return state_[check(i)].health.load(); }

  /// Forces a status, resetting the probe counters.
  void mark(std::size_t i, Health h) {
    State& s = state_[check(i)];
    std::lock_guard lock(s.mutex);
    s.consecutive_failures = 0;
    s.consecutive_successes = 0;
    s.health = h;
  }

  /// Probes worker i once and applies the thresholds.
  Health health_check(std::size_t i) {
    const bool ok = workers_[check(i)]->probe();
    return record_probe(i, ok);
  }

  Health record_probe(std::size_t i, bool ok) {
    State& s = state_[check(i)];
    std::lock_guard lock(s.mutex);
    if (ok) {
      s.consecutive_failures = 0;
      if (s.health == Health::Unhealthy && ++s.consecutive_successes >= policy_.success_threshold) {
        s.health = Health::Healthy;
        s.consecutive_successes = 0;
      }
    } else {
      s.consecutive_successes = 0;
      if (s.health == Health::Healthy && ++s.consecutive_failures >= policy_.failure_threshold) {
        s.health = Health::Unhealthy;
        s.consecutive_failures = 0;
      }
    }
    return s.health;
  }

  void probe_all() {
    for (std::size_t i = 0; i < workers_.size(); ++i) health_check(i);
  }

  std::size_t healthy_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < workers_.size(); ++i) n += state_[i].health.load() == Health::Healthy;
    return n;
  }

  std::uint64_t dispatched(std::size_t i) const { return state_[check(i)].dispatched.load(); }

 private:
  struct State {
    std::atomic<Health> health{Health::Healthy};
    std::atomic<std::uint64_t> dispatched{0};
    std::mutex mutex;
    int consecutive_failures = 0;
    int consecutive_successes = 0;
  };

  std::size_t check(std::size_t i) const {
    if (i >= workers_.size()) fail(ErrorCode::InvalidArgument, "worker index out of range");
    return i;
  }

  std::vector<std::shared_ptr<Worker>> workers_;
  HealthPolicy policy_;
  std::unique_ptr<State[]> state_;
  std::atomic<std::size_t> cursor_{0};
};

/// Probes every worker once per policy period on a background thread.
class HealthMonitor {
 public:
  explicit HealthMonitor(WorkerPool& pool)
      : thread_([this, &pool](std::stop_token st) { run(st, pool); }) {}

  ~HealthMonitor() {
    thread_.request_stop();
    cv_.notify_all();
  }

  HealthMonitor(const HealthMonitor&) = delete;
  HealthMonitor& operator=(const HealthMonitor&) = delete;

 private:
  void run(std::stop_token st, WorkerPool& pool) {
    std::unique_lock lock(mutex_);
    while (!st.stop_requested()) {
      lock.unlock();
      pool.probe_all();
      lock.lock();
      cv_.wait_for(lock, st, pool.policy().period, [] { return false; });
    }
  }

  std::mutex mutex_;
  std::condition_variable_any cv_;
  std::jthread thread_;  // last, so it stops before the members above go away
};

}  // namespace xcloud
