#include <gtest/gtest.h>

#include <fstream>
#include <mutex>
#include <random>
#include <thread>

#include "oracles.hpp"
#include "test_support.hpp"
#include "xcloud/catalog.hpp"
#include "xcloud/http_server.hpp"
#include "xcloud/loadgen.hpp"
#include "xcloud/stub_backends.hpp"

using namespace xcloud;
using namespace xcloud::loadgen;
using testing_support::TempDir;

namespace {

/// Returns scripted latencies indexed by ticket, failing tickets for which
/// `fails` is true. Never sleeps.
class ScriptedTransport final : public Transport {
 public:
  explicit ScriptedTransport(std::vector<double> latencies, std::function<bool(std::uint64_t)> fails = {})
      : latencies_(std::move(latencies)), fails_(std::move(fails)) {}

  bool probe() override { return reachable; }
  std::unique_ptr<Connection> connect() override { return std::make_unique<Conn>(*this); }

  bool reachable = true;

 private:
  struct Conn final : Connection {
    explicit Conn(const ScriptedTransport& t) : t(t) {}
    Outcome send(const Target&, std::uint64_t ticket) override {
      Outcome o;
      o.latency_ms = t.latencies_[ticket % t.latencies_.size()];
      o.http_status = t.fails_ && t.fails_(ticket) ? 500 : 200;
      return o;
    }
    const ScriptedTransport& t;
  };
  std::vector<double> latencies_;
  std::function<bool(std::uint64_t)> fails_;
};

/// Time advances only when someone sleeps.
class FakeClock final : public StressClock {
 public:
  Clock::time_point now() override {
    std::lock_guard lock(mutex_);
    return now_;
  }
  void sleep_until(Clock::time_point t) override {
    std::lock_guard lock(mutex_);
    now_ = std::max(now_, t);
  }

 private:
  std::mutex mutex_;
  Clock::time_point now_{};
};

Target post(std::string route) { return {std::move(route), HttpMethod::Post, {{"imgraw", "YWJj"}}}; }

StressPlan counted_plan(std::vector<Target> targets, std::uint64_t n, std::size_t users) {
  StressPlan p;
  p.targets = std::move(targets);
  p.total_requests = n;
  p.virtual_users = users;
  p.user_key = "k";
  return p;
}

/// Plain server with a fixed-delay handler.
class DelayServer {
 public:
  explicit DelayServer(std::chrono::milliseconds delay) {
    server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });
    server_.Post("/api/cv/plant", [delay](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(delay);
      res.set_content("{}", "application/json");
    });
    port = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~DelayServer() {
    server_.stop();
    thread_.join();
  }
  int port = 0;

 private:
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace

TEST(Plan, ParsesFile) {
  TempDir dir;
  std::ofstream(dir.path() / "leaf.jpg", std::ios::binary) << "leafbytes";
  const std::string text = R"(# nightly plan
base_url = http://10.0.0.5:9000
prefix = /v1/
user_key = key-lucas
virtual_users = 4
duration = 1.5
target_qps = 20
terminal_type = 1
target = POST cv/plant imgraw-random=16
target = POST /cv/fbp imgraw-file=leaf.jpg
target = POST cv/nsfw imgurl=http://img.test/a.jpg k=2
target = GET dm/zhihuliveeval id=12345
)";
  auto plan = parse_plan(text, dir.path());
  EXPECT_EQ(plan.base_url, "http://10.0.0.5:9000");
  EXPECT_EQ(plan.prefix, "/v1/");
  EXPECT_EQ(plan.user_key, "key-lucas");
  EXPECT_EQ(plan.virtual_users, 4u);
  EXPECT_EQ(plan.duration, std::chrono::milliseconds(1500));
  EXPECT_FALSE(plan.total_requests);
  EXPECT_EQ(plan.target_qps, 20.0);
  EXPECT_EQ(plan.terminal_type, 1);
  ASSERT_EQ(plan.targets.size(), 4u);
  EXPECT_EQ(plan.targets[0].params[0].first, "imgraw");
  EXPECT_EQ(base64_decode(plan.targets[0].params[0].second, 100).size(), 16u);
  EXPECT_EQ(plan.targets[1].route, "cv/fbp");
  EXPECT_EQ(base64_decode(plan.targets[1].params[0].second, 100), to_bytes("leafbytes"));
  EXPECT_EQ(plan.targets[2].params.size(), 2u);
  EXPECT_EQ(plan.targets[3].method, HttpMethod::Get);
  EXPECT_EQ(plan.targets[3].params[0], std::make_pair(std::string("id"), std::string("12345")));
  EXPECT_NO_THROW(validate(plan));

  // Same text, same payload bytes.
  EXPECT_EQ(parse_plan(text, dir.path()).targets[0].params, plan.targets[0].params);
}

TEST(Plan, ShippedPlanIsValid) {
  auto plan = load_plan(std::filesystem::path(XCLOUD_SOURCE_DIR) / "tools/plans/all_routes.plan");
  plan.user_key = "k";
  EXPECT_NO_THROW(validate(plan));
  ASSERT_EQ(plan.targets.size(), kPublicRoutes.size());
  for (std::size_t i = 0; i < kPublicRoutes.size(); ++i) {
    EXPECT_EQ(plan.targets[i].route, kPublicRoutes[i].route);
    EXPECT_EQ(plan.targets[i].method, kPublicRoutes[i].method);
  }
}

TEST(Plan, Errors) {
  auto code_of = [](const std::string& text) {
    try {
      validate(parse_plan(text));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::StorageFailure;
  };
  const std::string t = "target = POST cv/plant imgraw-random=8\n";
  EXPECT_EQ(code_of(t + "total_requests = 10\n"), ErrorCode::StorageFailure);
  EXPECT_EQ(code_of(t), ErrorCode::InvalidPlan);  // neither duration nor count
  EXPECT_EQ(code_of(t + "total_requests = 10\nduration = 5\n"), ErrorCode::InvalidPlan);
  EXPECT_EQ(code_of("total_requests = 10\n"), ErrorCode::InvalidPlan);
  EXPECT_EQ(code_of(t + "total_requests = 10\nvirtual_users = 0\n"), ErrorCode::InvalidPlan);
  EXPECT_EQ(code_of(t + "total_requests = 10\ntarget_qps = 0\n"), ErrorCode::InvalidPlan);
  EXPECT_EQ(code_of(t + "total_requests = ten\n"), ErrorCode::InvalidPlan);
  EXPECT_EQ(code_of(t + "total_requests = -1\n"), ErrorCode::InvalidPlan);
  EXPECT_EQ(code_of(t + "total_requests = 10\ncolour = blue\n"), ErrorCode::InvalidPlan);
  EXPECT_EQ(code_of("target = PUT cv/plant id=1\ntotal_requests = 1\n"), ErrorCode::InvalidPlan);
  EXPECT_EQ(code_of("target = POST cv/plant\ntotal_requests = 1\n"), ErrorCode::InvalidPlan);
  EXPECT_EQ(code_of("target = POST cv/plant imgraw-file=/no/such/file\ntotal_requests = 1\n"),
            ErrorCode::InvalidPlan);
  EXPECT_EQ(code_of(t + "total_requests 10\n"), ErrorCode::InvalidPlan);
}

TEST(Warmup, Count) {
  EXPECT_EQ(warmup_count(0), 0u);
  EXPECT_EQ(warmup_count(1), 0u);
  EXPECT_EQ(warmup_count(5), 4u);
  EXPECT_EQ(warmup_count(6), 5u);
  EXPECT_EQ(warmup_count(100), 5u);
  EXPECT_EQ(warmup_count(101), 6u);
  EXPECT_EQ(warmup_count(1000), 50u);
  EXPECT_EQ(warmup_count(10000), 500u);
}

TEST(Stress, ConstantDelayFixture) {
  DelayServer server(std::chrono::milliseconds(5));
  auto plan = counted_plan({post("cv/plant")}, 10, 1);
  plan.base_url = "http://127.0.0.1:" + std::to_string(server.port);
  const auto start = std::chrono::steady_clock::now();
  auto report = run_stress(plan);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(2));
  ASSERT_EQ(report.rows.size(), 1u);
  EXPECT_EQ(report.rows[0].error_count, 0u);
  EXPECT_EQ(report.rows[0].sample_count, 10u);
  EXPECT_NEAR(report.rows[0].avg_latency, 5.0, 2.5);
}

TEST(Stress, ClosedPortIsUnreachable) {
  const int port = testing_support::closed_port();
  auto plan = counted_plan({post("cv/plant")}, 10, 1);
  plan.base_url = "http://127.0.0.1:" + std::to_string(port);
  try {
    run_stress(plan);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TargetUnreachable);
  }
}

TEST(Stress, ConservationAndRowShape) {
  ScriptedTransport transport({1.0, 2.0, 3.0}, [](std::uint64_t t) { return t % 7 == 3; });
  auto plan = counted_plan({post("cv/plant"), post("cv/fbp"), post("cv/plant")}, 1000, 8);
  auto report = run_stress(plan, transport);
  EXPECT_EQ(report.attempts, 1000u);
  EXPECT_EQ(report.successes + report.errors, report.attempts);
  EXPECT_EQ(report.errors, 143u);  // tickets 3, 10, ..., 997
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[0].api, "cv/plant");
  EXPECT_EQ(report.rows[1].api, "cv/fbp");
  std::uint64_t samples = 0, errors = 0;
  for (const auto& r : report.rows) {
    samples += r.sample_count;
    errors += r.error_count;
  }
  EXPECT_EQ(samples, report.successes);
  EXPECT_EQ(errors, report.errors);
}

TEST(Stress, LosslessAggregationPerRoute) {
  std::mt19937_64 rng(11);
  std::vector<double> lat(3000);
  for (auto& l : lat) l = static_cast<double>(1 + rng() % 400) / 4.0;
  ScriptedTransport transport(lat);
  std::vector<Target> targets{post("cv/plant"), post("cv/fbp"), post("cv/nsfw")};
  auto report = run_stress(counted_plan(targets, lat.size(), 16), transport);
  ASSERT_EQ(report.rows.size(), 3u);
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<double> mine;
    for (std::size_t t = r; t < lat.size(); t += 3) mine.push_back(lat[t]);
    const std::size_t skip = std::max<std::size_t>(5, (mine.size() * 5 + 99) / 100);
    mine.erase(mine.begin(), mine.begin() + static_cast<std::ptrdiff_t>(skip));
    long double sum = 0;
    for (double v : mine) sum += v;
    EXPECT_DOUBLE_EQ(report.rows[r].avg_latency, static_cast<double>(sum / mine.size()));
    EXPECT_EQ(report.rows[r].p99, oracle::percentile_permille(mine, 990));
    EXPECT_EQ(report.rows[r].sample_count, 1000u);
  }
}

TEST(Stress, PacedScheduleWithFakeClock) {
  ScriptedTransport transport({4.0});
  FakeClock clock;
  auto plan = counted_plan({post("cv/plant")}, 50, 1);
  plan.target_qps = 10.0;
  auto report = run_stress(plan, transport, clock);
  EXPECT_EQ(report.attempts, 50u);
  EXPECT_NEAR(report.wall_time_s, 4.9, 1e-9);
  EXPECT_NEAR(report.achieved_qps, 50 / 4.9, 1e-9);

  FakeClock clock2;
  StressPlan timed = plan;
  timed.total_requests.reset();
  timed.duration = std::chrono::seconds(2);
  timed.virtual_users = 3;
  auto r2 = run_stress(timed, transport, clock2);
  EXPECT_EQ(r2.attempts, 20u);  // releases at 0.0, 0.1, ..., 1.9 s
}

TEST(Stress, UnreachableScriptedTransport) {
  ScriptedTransport transport({1.0});
  transport.reachable = false;
  EXPECT_THROW(run_stress(counted_plan({post("cv/plant")}, 1, 1), transport), Error);
}

TEST(Stress, AgainstGatewayStack) {
  TempDir dir;
  Registry registry;
  install_default_catalog(registry);
  store::Store store(dir.path(), store::CredentialHashing::Minimal);
  store.create_user({"lucas", 0, "SCUT", "lucas@example.org", "key-lucas", "pw", std::nullopt});
  WorkerPool pool({std::make_shared<LocalWorker>("W1"), std::make_shared<LocalWorker>("W2")});
  Gateway gateway(registry, store, pool, fetch_image_url);
  HttpGateway http(gateway);
  http.bind("127.0.0.1", 0);
  http.start();

  auto plan = parse_plan(
      "user_key = key-lucas\nvirtual_users = 4\ntotal_requests = 120\n"
      "target = POST cv/plant imgraw-random=512\ntarget = GET dm/zhihuliveeval id=12345\n"
      "target = POST cv/plant imgraw-random=9\n");
  plan.base_url = "http://127.0.0.1:" + std::to_string(http.port());
  auto report = run_stress(plan);
  EXPECT_EQ(report.errors, 0u);
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[0].sample_count, 80u);
  gateway.flush_logs();
  EXPECT_EQ(store.count_calls(), 120u);
  EXPECT_EQ(store.query_calls({.limit = 1})[0].terminal_type, 4);

  plan.user_key = "wrong";
  auto denied = run_stress(plan);
  EXPECT_EQ(denied.errors, 120u);
  EXPECT_EQ(denied.rows[0].sample_count, 0u);
  EXPECT_EQ(denied.rows[0].error_count, 80u);
}

TEST(Render, TableGolden) {
  StressReport report;
  report.rows = {{"cv/fbp", 25.0, 36.0, 0, 100}, {"dm/zhihuliveeval", 24.5, 35.49, 12, 100}};
  const std::string expected =
      "API              | AVG_LATENCY (ms) | P99 (ms) | ERROR\n"
      "-----------------+------------------+----------+------\n"
      "cv/fbp           |               25 |       36 |     0\n"
      "dm/zhihuliveeval |               25 |       35 |    12\n";
  EXPECT_EQ(render_report(report), expected);
  EXPECT_EQ(render_report(report), render_report(StressReport(report)));
}

TEST(Render, WideNumbersAndEmpty) {
  StressReport report;
  report.rows = {{"cv/fbp", 123456789.4, 1.5, 9876543, 1}};
  const std::string out = render_report(report);
  EXPECT_NE(out.find("cv/fbp |        123456789 |        2 | 9876543\n"), std::string::npos) << out;
  EXPECT_THROW(render_report(StressReport{}), Error);
  EXPECT_THROW(render_csv(StressReport{}), Error);
}

TEST(Render, CsvGolden) {
  StressReport report;
  report.rows = {{"cv/fbp", 25.0, 36.125, 0, 100}};
  EXPECT_EQ(render_csv(report), "api,avg_latency_ms,p99_ms,error_count,sample_count\ncv/fbp,25.000,36.125,0,100\n");
}

TEST(Bench, SyntheticOverheadFps) {
  Registry registry;
  const SyntheticCost cost{std::chrono::milliseconds(10), std::chrono::microseconds(0)};
  registry.register_backend("synthetic", with_cost(std::make_shared<StubClassifier>(numbered_labels("c", 10)), cost));

  auto naive = bench_throughput(registry, "synthetic", BenchMode::Naive, 100);
  EXPECT_EQ(naive.calls, 100u);
  EXPECT_NEAR(naive.fps, 100.0, 20.0);
  EXPECT_NEAR(naive.fps, naive.items / naive.wall_time_s, naive.fps * 0.01);

  auto batched = bench_throughput(registry, "synthetic", BenchMode::Batched, 100, 10);
  EXPECT_EQ(batched.calls, 10u);
  EXPECT_NEAR(batched.fps, 1000.0, 200.0);

  auto one = bench_throughput(registry, "synthetic", BenchMode::Batched, 1, 10);
  EXPECT_GT(one.fps, 0.0);
  EXPECT_EQ(one.calls, 1u);
}

TEST(Bench, RatioTracksBatchSize) {
  Registry registry;
  const SyntheticCost cost{std::chrono::milliseconds(10), std::chrono::microseconds(0)};
  registry.register_backend("synthetic", with_cost(std::make_shared<StubRegressor>(0.0, 5.0), cost));
  const double naive = bench_throughput(registry, "synthetic", BenchMode::Naive, 64).fps;
  for (std::size_t b : {2u, 4u, 8u, 16u}) {
    const double ratio = bench_throughput(registry, "synthetic", BenchMode::Batched, 64, b).fps / naive;
    EXPECT_NEAR(ratio, static_cast<double>(b), 0.25 * b) << "B=" << b;
  }
}

TEST(Bench, Errors) {
  Registry registry;
  install_default_catalog(registry);
  EXPECT_THROW(bench_throughput(registry, "nope", BenchMode::Naive, 10), Error);
  EXPECT_THROW(bench_throughput(registry, "plant-stub", BenchMode::Naive, 0), Error);
  EXPECT_THROW(bench_throughput(registry, "plant-stub", BenchMode::Batched, 10, 0), Error);
  EXPECT_GT(bench_throughput(registry, "face-histogram", BenchMode::Batched, 10, 3).fps, 0.0);
  EXPECT_EQ(parse_bench_mode("batched"), BenchMode::Batched);
  EXPECT_THROW(parse_bench_mode("turbo"), Error);
}
