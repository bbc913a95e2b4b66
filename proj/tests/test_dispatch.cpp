#include <gtest/gtest.h>

#include <atomic>
#include <memory>
#include <thread>
#include <vector>

#include "xcloud/dispatch.hpp"

using namespace xcloud;

namespace {

std::vector<std::shared_ptr<Worker>> local_workers(std::size_t n) {
  std::vector<std::shared_ptr<Worker>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::make_shared<LocalWorker>("W" + std::to_string(i + 1)));
  return out;
}

class ScriptedWorker final : public Worker {
 public:
  const std::string& name() const override { return name_; }
  bool probe() override { return up; }
  void execute(const std::function<void()>& job) override { job(); }
  bool up = true;

 private:
  std::string name_ = "scripted";
};

}  // namespace

TEST(Dispatch, RoundRobinOrder) {
  WorkerPool pool(local_workers(2));
  std::vector<std::size_t> got;
  for (int i = 0; i < 4; ++i) got.push_back(pool.dispatch());
  EXPECT_EQ(got, (std::vector<std::size_t>{0, 1, 0, 1}));
}

TEST(Dispatch, SkipsUnhealthy) {
  WorkerPool pool(local_workers(2));
  pool.mark(0, Health::Unhealthy);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(pool.dispatch(), 1u);
}

TEST(Dispatch, SkippingDoesNotConsumeATurn) {
  WorkerPool pool(local_workers(3));
  EXPECT_EQ(pool.dispatch(), 0u);
  pool.mark(1, Health::Unhealthy);
  EXPECT_EQ(pool.dispatch(), 2u);
  pool.mark(1, Health::Healthy);
  EXPECT_EQ(pool.dispatch(), 0u);
  EXPECT_EQ(pool.dispatch(), 1u);
}

TEST(Dispatch, ExactFairness) {
  WorkerPool pool(local_workers(3));
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 3000; ++i) ++counts[pool.dispatch()];
  EXPECT_EQ(counts, (std::vector<int>{1000, 1000, 1000}));
}

TEST(Dispatch, ConcurrentFairness) {
  WorkerPool pool(local_workers(3));
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 750; ++i) pool.dispatch();
    });
  }
  for (auto& t : threads) t.join();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(pool.dispatched(i), 1000u);
}

TEST(Dispatch, NoHealthyWorker) {
  WorkerPool pool(local_workers(2));
  pool.mark(0, Health::Unhealthy);
  pool.mark(1, Health::Unhealthy);
  try {
    pool.dispatch();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoHealthyWorker);
  }
  EXPECT_THROW(WorkerPool({}), Error);
}

TEST(Health, Hysteresis) {
  auto w = std::make_shared<ScriptedWorker>();
  WorkerPool pool({w});
  EXPECT_EQ(pool.health_check(0), Health::Healthy);

  // Flapping with fewer than F=3 consecutive failures stays healthy.
  for (int round = 0; round < 5; ++round) {
    w->up = false;
    EXPECT_EQ(pool.health_check(0), Health::Healthy);
    EXPECT_EQ(pool.health_check(0), Health::Healthy);
    w->up = true;
    EXPECT_EQ(pool.health_check(0), Health::Healthy);
  }

  w->up = false;
  pool.health_check(0);
  pool.health_check(0);
  EXPECT_EQ(pool.health_check(0), Health::Unhealthy);

  // S=2 consecutive successes to come back.
  w->up = true;
  EXPECT_EQ(pool.health_check(0), Health::Unhealthy);
  w->up = false;
  EXPECT_EQ(pool.health_check(0), Health::Unhealthy);
  w->up = true;
  EXPECT_EQ(pool.health_check(0), Health::Unhealthy);
  EXPECT_EQ(pool.health_check(0), Health::Healthy);
}

TEST(Health, MonitorMarksDownWorker) {
  auto w1 = std::make_shared<LocalWorker>("W1");
  auto w2 = std::make_shared<LocalWorker>("W2");
  WorkerPool pool({w1, w2}, HealthPolicy{3, 2, std::chrono::milliseconds(5)});
  HealthMonitor monitor(pool);
  w1->set_serving(false);
  for (int i = 0; i < 400 && pool.health(0) == Health::Healthy; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  EXPECT_EQ(pool.health(0), Health::Unhealthy);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(pool.dispatch(), 1u);
}

TEST(LocalWorker, BoundsConcurrency) {
  LocalWorker w("W", 2);
  std::atomic<int> in_flight{0}, peak{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 6; ++t) {
    threads.emplace_back([&] {
      w.execute([&] {
        const int now = ++in_flight;
        int p = peak.load();
        while (now > p && !peak.compare_exchange_weak(p, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        --in_flight;
      });
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(peak.load(), 2);
  EXPECT_EQ(w.executed(), 6u);
}
