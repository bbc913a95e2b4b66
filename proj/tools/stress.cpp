// stress: load-test a running gateway, or benchmark a backend in-process.
//
//   stress run --plan plan.txt [--users N] [--duration S] [--qps Q] [--out report.txt] [--format table|csv]
//   stress bench --backend plant-stub --mode batched --items 100 --batch 10
//
// `run` exits 0 only when every request succeeded.

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "xcloud/catalog.hpp"
#include "xcloud/loadgen.hpp"
#include "xcloud/stub_backends.hpp"

namespace {

using namespace xcloud;
using namespace xcloud::loadgen;

struct RunOptions {
  std::string plan_path;
  std::optional<std::size_t> users;
  std::optional<double> duration_s;
  std::optional<std::uint64_t> total;
  std::optional<double> qps;
  std::optional<std::string> base_url;
  std::optional<std::string> user_key;
  std::string out;
  std::string format = "table";
};

int run(const RunOptions& o) {
  StressPlan plan = load_plan(o.plan_path);
  if (o.users) plan.virtual_users = *o.users;
  if (o.duration_s) {
    plan.duration = std::chrono::milliseconds(std::llround(*o.duration_s * 1000));
    plan.total_requests.reset();
  }
  if (o.total) {
    plan.total_requests = *o.total;
    plan.duration.reset();
  }
  if (o.qps) plan.target_qps = *o.qps;
  if (o.base_url) plan.base_url = *o.base_url;
  if (o.user_key) plan.user_key = *o.user_key;

  const StressReport report = run_stress(plan);
  const std::string text = o.format == "csv" ? render_csv(report) : render_report(report);
  std::cout << text;
  std::fprintf(stderr, "%llu requests, %llu errors, %.2f s, %.2f QPS\n",
               static_cast<unsigned long long>(report.attempts), static_cast<unsigned long long>(report.errors),
               report.wall_time_s, report.achieved_qps);
  if (!o.out.empty()) {
    std::ofstream out(o.out, std::ios::binary);
    if (!out) fail(ErrorCode::InvalidArgument, "cannot write " + o.out);
    out << text;
  }
  return report.errors == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stress: gateway load generator and backend throughput bench"};
  app.require_subcommand(1);

  RunOptions ro;
  auto* run_cmd = app.add_subcommand("run", "Run a stress plan against a gateway");
  run_cmd->add_option("--plan", ro.plan_path, "Plan file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--users", ro.users, "Virtual users (overrides the plan)");
  run_cmd->add_option("--duration", ro.duration_s, "Seconds to run (overrides the plan)");
  run_cmd->add_option("--total", ro.total, "Total requests instead of a duration");
  run_cmd->add_option("--qps", ro.qps, "Pace to this many requests per second");
  run_cmd->add_option("--base-url", ro.base_url, "Gateway base URL (overrides the plan)");
  run_cmd->add_option("--key", ro.user_key, "API key (overrides the plan)")->envname("XCLOUD_API_KEY");
  run_cmd->add_option("--out", ro.out, "Also write the report here");
  run_cmd->add_option("--format", ro.format, "table or csv")
      ->check(CLI::IsMember({"table", "csv"}))
      ->capture_default_str();
  run_cmd->get_option("--duration")->excludes(run_cmd->get_option("--total"));

  std::string backend, mode = "naive";
  std::size_t items = 100, batch = 10;
  double overhead_ms = 10.0, per_item_ms = 0.0;
  auto* bench_cmd = app.add_subcommand("bench", "Naive vs batched throughput of one backend");
  bench_cmd->add_option("--backend", backend, "Backend id, e.g. plant-stub")->required();
  bench_cmd->add_option("--mode", mode, "naive or batched")
      ->check(CLI::IsMember({"naive", "batched"}))
      ->capture_default_str();
  bench_cmd->add_option("--items", items, "Images to push through")->capture_default_str();
  bench_cmd->add_option("--batch", batch, "Batch size in batched mode")->capture_default_str();
  bench_cmd->add_option("--overhead-ms", overhead_ms, "Synthetic cost per backend call")->capture_default_str();
  bench_cmd->add_option("--per-item-ms", per_item_ms, "Synthetic cost per item")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return run(ro);
    if (*bench_cmd) {
      Registry registry;
      const auto us = [](double ms) { return std::chrono::microseconds(std::llround(ms * 1000)); };
      install_default_catalog(registry, SyntheticCost{us(overhead_ms), us(per_item_ms)});
      const auto r = bench_throughput(registry, backend, parse_bench_mode(mode), items, batch);
      std::printf("backend=%s mode=%s items=%zu batch=%zu calls=%zu wall=%.3fs fps=%.2f\n", r.backend_id.c_str(),
                  std::string(to_string(r.mode)).c_str(), r.items, r.batch_size, r.calls, r.wall_time_s, r.fps);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::TargetUnreachable ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
