#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "xcloud/base64.hpp"
#include "xcloud/error.hpp"
#include "xcloud/hash.hpp"
#include "xcloud/http.hpp"
#include "xcloud/metrics.hpp"
#include "xcloud/registry.hpp"

namespace xcloud::loadgen {

using Clock = std::chrono::steady_clock;

/// One request shape of a stress plan; params are sent verbatim (imgraw
/// already base-64 encoded).
struct Target {
  std::string route;
  HttpMethod method = HttpMethod::Post;
  std::vector<std::pair<std::string, std::string>> params;
};

struct StressPlan {
  std::vector<Target> targets;
  std::size_t virtual_users = 20;
  std::optional<std::chrono::milliseconds> duration;
  std::optional<std::uint64_t> total_requests;
  std::optional<double> target_qps;
  std::string user_key;
  std::string base_url = "http://127.0.0.1:8080";
  std::string prefix = "/api/";
  int terminal_type = 4;
};

inline void validate(const StressPlan& plan) {
  if (plan.targets.empty()) fail(ErrorCode::InvalidPlan, "plan has no targets");
  for (const auto& t : plan.targets) {
    if (t.route.empty()) fail(ErrorCode::InvalidPlan, "target with empty route");
  }
  if (plan.virtual_users < 1) fail(ErrorCode::InvalidPlan, "virtual_users must be >= 1");
  if (plan.duration.has_value() == plan.total_requests.has_value()) {
    fail(ErrorCode::InvalidPlan, "set exactly one of duration and total_requests");
  }
  if (plan.duration && plan.duration->count() <= 0) fail(ErrorCode::InvalidPlan, "duration must be positive");
  if (plan.total_requests && *plan.total_requests == 0) fail(ErrorCode::InvalidPlan, "total_requests must be >= 1");
  if (plan.target_qps && !(std::isfinite(*plan.target_qps) && *plan.target_qps > 0)) {
    fail(ErrorCode::InvalidPlan, "target_qps must be a positive number");
  }
  if (plan.terminal_type < 0 || plan.terminal_type > 4) fail(ErrorCode::InvalidPlan, "terminal_type must be 0..4");
}

// --- plan file --------------------------------------------------------------

/// Deterministic pseudo-random image bytes for `imgraw-random=N`.
inline Bytes random_image(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Bytes out(n);
  for (auto& b : out) b = static_cast<Byte>(rng());
  return out;
}

namespace plan_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

[[noreturn]] inline void bad_line(std::size_t line, const std::string& what) {
  fail(ErrorCode::InvalidPlan, "line " + std::to_string(line) + ": " + what);
}

template <class T>
T parse_number(const std::string& v, std::size_t line, const char* key) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(std::stod(v, &used));
    } else {
      if (!v.empty() && v.front() == '-') throw std::invalid_argument("negative");
      out = static_cast<T>(std::stoull(v, &used));
    }
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    bad_line(line, std::string(key) + " expects a number, got '" + v + "'");
  }
}

inline Target parse_target(const std::string& spec, const std::filesystem::path& base_dir, std::size_t line) {
  auto tok = split_ws(spec);
  if (tok.size() < 3) bad_line(line, "target needs METHOD ROUTE PAYLOAD");
  Target t;
  if (tok[0] == "POST") t.method = HttpMethod::Post;
  else if (tok[0] == "GET") t.method = HttpMethod::Get;
  else bad_line(line, "method must be GET or POST");
  t.route = tok[1];
  while (!t.route.empty() && t.route.front() == '/') t.route.erase(t.route.begin());
  for (std::size_t i = 2; i < tok.size(); ++i) {
    const auto eq = tok[i].find('=');
    if (eq == std::string::npos || eq == 0) bad_line(line, "payload '" + tok[i] + "' is not name=value");
    const std::string name = tok[i].substr(0, eq), value = tok[i].substr(eq + 1);
    if (name == "imgraw-random") {
      const auto n = parse_number<std::size_t>(value, line, "imgraw-random");
      if (n == 0) bad_line(line, "imgraw-random needs at least one byte");
      t.params.emplace_back("imgraw", base64_encode(random_image(n, stable_hash(t.route) ^ n)));
    } else if (name == "imgraw-file") {
      const std::filesystem::path p = std::filesystem::path(value).is_absolute() ? std::filesystem::path(value) : base_dir / value;
      std::ifstream in(p, std::ios::binary);
      if (!in) bad_line(line, "cannot read " + p.string());
      const Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (bytes.empty()) bad_line(line, p.string() + " is empty");
      t.params.emplace_back("imgraw", base64_encode(bytes));
    } else {
      t.params.emplace_back(name, value);
    }
  }
  return t;
}

}  // namespace plan_detail

/// Parses the key=value plan format:
///
///   base_url = http://127.0.0.1:8080
///   user_key = key-lucas
///   virtual_users = 20
///   duration = 60            # seconds; or total_requests = N
///   target_qps = 20          # optional
///   target = POST cv/plant imgraw-random=2048
///   target = GET dm/zhihuliveeval id=12345
///
/// `imgraw-file=` paths are relative to `base_dir`.
inline StressPlan parse_plan(std::string_view text, const std::filesystem::path& base_dir = ".") {
  using namespace plan_detail;
  StressPlan plan;
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) bad_line(line_no, "expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "target") {
      plan.targets.push_back(parse_target(value, base_dir, line_no));
    } else if (key == "base_url") {
      plan.base_url = value;
    } else if (key == "prefix") {
      plan.prefix = value;
    } else if (key == "user_key") {
      plan.user_key = value;
    } else if (key == "virtual_users" || key == "users") {
      plan.virtual_users = parse_number<std::size_t>(value, line_no, "virtual_users");
    } else if (key == "duration") {
      const double s = parse_number<double>(value, line_no, "duration");
      plan.duration = std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(s * 1000)));
    } else if (key == "total_requests") {
      plan.total_requests = parse_number<std::uint64_t>(value, line_no, "total_requests");
    } else if (key == "target_qps" || key == "qps") {
      plan.target_qps = parse_number<double>(value, line_no, "target_qps");
    } else if (key == "terminal_type") {
      plan.terminal_type = parse_number<int>(value, line_no, "terminal_type");
    } else {
      bad_line(line_no, "unknown key '" + key + "'");
    }
  }
  return plan;
}

inline StressPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::InvalidPlan, "cannot read plan " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_plan(text.str(), path.parent_path().empty() ? "." : path.parent_path());
}

// --- transport and clock ----------------------------------------------------

struct Outcome {
  int http_status = 0;
  double latency_ms = 0.0;
  bool transport_error = false;
  std::string error;

  bool ok() const noexcept { return !transport_error && http_status >= 200 && http_status < 300; }
};

/// One virtual user's channel to the gateway. Used from a single thread.
class Connection {
 public:
  virtual ~Connection() = default;
  /// Latency runs from the start of the request write to the last body byte.
  virtual Outcome send(const Target& target, std::uint64_t ticket) = 0;
};

class Transport {
 public:
  virtual ~Transport() = default;
  /// False when the gateway cannot be reached at all.
  virtual bool probe() = 0;
  virtual std::unique_ptr<Connection> connect() = 0;
};

class StressClock {
 public:
  virtual ~StressClock() = default;
  virtual Clock::time_point now() = 0;
  virtual void sleep_until(Clock::time_point t) = 0;
};

class SteadyClock final : public StressClock {
 public:
  Clock::time_point now() override { return Clock::now(); }
  void sleep_until(Clock::time_point t) override { std::this_thread::sleep_until(t); }
};

class HttpTransport final : public Transport {
 public:
  HttpTransport(std::string base_url, std::string prefix, std::string user_key, int terminal_type = 4,
                std::chrono::seconds timeout = std::chrono::seconds(30))
      : base_url_(std::move(base_url)),
        prefix_(std::move(prefix)),
        user_key_(std::move(user_key)),
        terminal_type_(terminal_type),
        timeout_(timeout) {
    if (prefix_.empty() || prefix_.front() != '/') prefix_.insert(0, "/");
    if (prefix_.back() != '/') prefix_.push_back('/');
  }

  explicit HttpTransport(const StressPlan& plan)
      : HttpTransport(plan.base_url, plan.prefix, plan.user_key, plan.terminal_type) {}

  bool probe() override {
    httplib::Client c(base_url_);
    c.set_connection_timeout(2, 0);
    c.set_read_timeout(5, 0);
    return static_cast<bool>(c.Get("/healthz"));
  }

  std::unique_ptr<Connection> connect() override { return std::make_unique<HttpConnection>(*this); }

 private:
  class HttpConnection final : public Connection {
   public:
    explicit HttpConnection(const HttpTransport& t) : owner_(t), client_(t.base_url_) {
      client_.set_keep_alive(true);
      client_.set_connection_timeout(t.timeout_);
      client_.set_read_timeout(t.timeout_);
      client_.set_write_timeout(t.timeout_);
    }

    Outcome send(const Target& target, std::uint64_t) override {
      httplib::Params params(target.params.begin(), target.params.end());
      params.emplace("terminal_type", std::to_string(owner_.terminal_type_));
      const httplib::Headers headers{{"X-API-Key", owner_.user_key_}};
      const std::string path = owner_.prefix_ + target.route;

      const auto start = Clock::now();
      auto res = target.method == HttpMethod::Get ? client_.Get(httplib::append_query_params(path, params), headers)
                                                  : client_.Post(path, headers, params);
      Outcome out;
      out.latency_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      if (!res) {
        out.transport_error = true;
        out.error = httplib::to_string(res.error());
      } else {
        out.http_status = res->status;
      }
      return out;
    }

   private:
    const HttpTransport& owner_;
    httplib::Client client_;
  };

  std::string base_url_;
  std::string prefix_;
  std::string user_key_;
  int terminal_type_;
  std::chrono::seconds timeout_;
};

// --- stress run ---------------------------------------------------------------

struct StressReport {
  std::vector<metrics::LatencySummary> rows;  // one per distinct target route, plan order
  double wall_time_s = 0.0;
  double achieved_qps = 0.0;
  std::uint64_t attempts = 0;
  std::uint64_t successes = 0;
  std::uint64_t errors = 0;
};

/// Successes excluded from latency statistics at the start of each route:
/// 5% of the route's successful samples, at least 5, always leaving one.
inline std::size_t warmup_count(std::size_t successes) {
  if (successes == 0) return 0;
  const std::size_t five_percent = (successes + 19) / 20;
  return std::min(successes - 1, std::max<std::size_t>(5, five_percent));
}

struct Sample {
  std::uint64_t ticket = 0;
  std::size_t target = 0;
  bool ok = false;
  double latency_ms = 0.0;
};

/// Aggregates samples into per-route rows. Samples are ordered by ticket
/// before warmup is applied.
inline std::vector<metrics::LatencySummary> summarize_samples(const std::vector<Target>& targets,
                                                              std::vector<Sample> samples) {
  std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) { return a.ticket < b.ticket; });
  std::vector<std::string> routes;
  std::map<std::string, std::size_t> row_of;
  std::vector<std::size_t> target_row(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto [it, fresh] = row_of.try_emplace(targets[i].route, routes.size());
    if (fresh) routes.push_back(targets[i].route);
    target_row[i] = it->second;
  }
  std::vector<std::vector<double>> latencies(routes.size());
  std::vector<std::uint64_t> errors(routes.size(), 0);
  for (const auto& s : samples) {
    const std::size_t row = target_row.at(s.target);
    if (s.ok) latencies[row].push_back(s.latency_ms);
    else ++errors[row];
  }
  std::vector<metrics::LatencySummary> rows;
  for (std::size_t r = 0; r < routes.size(); ++r) {
    metrics::LatencySummary row;
    const auto& lat = latencies[r];
    if (!lat.empty()) {
      const std::size_t skip = warmup_count(lat.size());
      row = metrics::summarize_latencies(routes[r], std::span<const double>(lat).subspan(skip), errors[r]);
    } else {
      row.api = routes[r];
      row.error_count = errors[r];
    }
    row.sample_count = lat.size();
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Runs the plan: virtual users share a ticket counter; ticket i goes to
/// target i mod |targets|. With target_qps, ticket i is released at
/// start + i/qps; otherwise each user sends back-to-back.
inline StressReport run_stress(const StressPlan& plan, Transport& transport, StressClock& clock) {
  validate(plan);
  if (!transport.probe()) fail(ErrorCode::TargetUnreachable, "gateway at " + plan.base_url + " is unreachable");

  std::atomic<std::uint64_t> next{0};
  std::vector<std::vector<Sample>> per_user(plan.virtual_users);
  const auto start = clock.now();
  const auto end = plan.duration ? std::optional(start + *plan.duration) : std::nullopt;

  auto user = [&](std::size_t u) {
    auto conn = transport.connect();
    auto& out = per_user[u];
    for (;;) {
      const std::uint64_t ticket = next.fetch_add(1);
      if (plan.total_requests && ticket >= *plan.total_requests) break;
      if (plan.target_qps) {
        const auto release =
            start + std::chrono::duration_cast<Clock::duration>(
                        std::chrono::duration<double>(static_cast<double>(ticket) / *plan.target_qps));
        if (end && release >= *end) break;
        clock.sleep_until(release);
      } else if (end && clock.now() >= *end) {
        break;
      }
      const std::size_t target = ticket % plan.targets.size();
      Outcome o;
      try {
        o = conn->send(plan.targets[target], ticket);
      } catch (const std::exception& e) {
        o.transport_error = true;
        o.error = e.what();
      }
      out.push_back({ticket, target, o.ok(), o.latency_ms});
    }
  };

  {
    std::vector<std::jthread> users;
    users.reserve(plan.virtual_users);
    for (std::size_t u = 0; u < plan.virtual_users; ++u) users.emplace_back(user, u);
  }
  const double wall = std::chrono::duration<double>(clock.now() - start).count();

  std::vector<Sample> samples;
  for (auto& v : per_user) samples.insert(samples.end(), v.begin(), v.end());

  StressReport report;
  report.attempts = samples.size();
  for (const auto& s : samples) (s.ok ? report.successes : report.errors) += 1;
  report.rows = summarize_samples(plan.targets, std::move(samples));
  report.wall_time_s = wall;
  report.achieved_qps = wall > 0 ? static_cast<double>(report.successes) / wall : 0.0;
  return report;
}

inline StressReport run_stress(const StressPlan& plan, Transport& transport) {
  SteadyClock clock;
  return run_stress(plan, transport, clock);
}

inline StressReport run_stress(const StressPlan& plan) {
  HttpTransport transport(plan);
  return run_stress(plan, transport);
}

// --- rendering ----------------------------------------------------------------

/// Fixed-width table, latencies rounded half-up to whole milliseconds.
inline std::string render_report(const StressReport& report) {
  if (report.rows.empty()) fail(ErrorCode::InvalidArgument, "report has no rows");
  static constexpr const char* kHeaders[] = {"API", "AVG_LATENCY (ms)", "P99 (ms)", "ERROR"};
  std::size_t api_width = std::string_view(kHeaders[0]).size();
  for (const auto& r : report.rows) api_width = std::max(api_width, r.api.size());
  std::vector<std::size_t> widths{api_width};
  for (int c = 1; c < 4; ++c) widths.push_back(std::string_view(kHeaders[c]).size());

  std::vector<std::vector<std::string>> lines;
  lines.push_back({kHeaders[0], kHeaders[1], kHeaders[2], kHeaders[3]});
  for (const auto& r : report.rows) {
    lines.push_back({r.api, std::to_string(metrics::round_half_up(r.avg_latency)),
                     std::to_string(metrics::round_half_up(r.p99)), std::to_string(r.error_count)});
    for (int c = 1; c < 4; ++c) widths[c] = std::max(widths[c], lines.back()[c].size());
  }

  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::size_t pad = widths[c] - cells[c].size();
      if (c > 0) out += " | ";
      if (c == 0) out += cells[c] + std::string(pad, ' ');
      else out += std::string(pad, ' ') + cells[c];
    }
    out += '\n';
  };
  emit(lines[0]);
  for (std::size_t c = 0; c < widths.size(); ++c) {
    if (c > 0) out += "-+-";
    out += std::string(widths[c], '-');
  }
  out += '\n';
  for (std::size_t i = 1; i < lines.size(); ++i) emit(lines[i]);
  return out;
}

/// CSV with full-precision latencies.
inline std::string render_csv(const StressReport& report) {
  if (report.rows.empty()) fail(ErrorCode::InvalidArgument, "report has no rows");
  std::string out = "api,avg_latency_ms,p99_ms,error_count,sample_count\n";
  char buf[64];
  for (const auto& r : report.rows) {
    out += r.api;
    std::snprintf(buf, sizeof buf, ",%.3f,%.3f,", r.avg_latency, r.p99);
    out += buf;
    out += std::to_string(r.error_count) + "," + std::to_string(r.sample_count) + "\n";
  }
  return out;
}

// --- throughput bench -----------------------------------------------------------

enum class BenchMode { Naive, Batched };

inline std::string_view to_string(BenchMode m) { return m == BenchMode::Naive ? "naive" : "batched"; }

inline BenchMode parse_bench_mode(std::string_view s) {
  if (s == "naive") return BenchMode::Naive;
  if (s == "batched") return BenchMode::Batched;
  fail(ErrorCode::InvalidArgument, "mode must be naive or batched");
}

struct ThroughputResult {
  std::string backend_id;
  BenchMode mode = BenchMode::Naive;
  std::size_t items = 0;
  std::size_t batch_size = 1;
  std::size_t calls = 0;
  double wall_time_s = 0.0;
  double fps = 0.0;
};

/// Pushes `items` synthetic images through a backend, one per call (naive)
/// or in batches of `batch_size` (batched), and reports items per second.
inline ThroughputResult bench_throughput(const Registry& registry, const std::string& backend_id, BenchMode mode,
                                         std::size_t items, std::size_t batch_size = 1) {
  const auto kind = registry.backend_kind(backend_id);
  if (!kind) fail(ErrorCode::UnknownBackend, "no backend '" + backend_id + "'");
  if (items < 1) fail(ErrorCode::InvalidArgument, "items must be >= 1");
  if (mode == BenchMode::Batched && batch_size < 1) fail(ErrorCode::InvalidArgument, "batch must be >= 1");
  const std::size_t b = mode == BenchMode::Naive ? 1 : batch_size;

  std::vector<Bytes> inputs;
  inputs.reserve(items);
  for (std::size_t i = 0; i < items; ++i) inputs.push_back(random_image(256, i + 1));

  ThroughputResult r{backend_id, mode, items, b, 0, 0.0, 0.0};
  const auto start = Clock::now();
  for (std::size_t i = 0; i < items; i += b) {
    const auto chunk = std::span<const Bytes>(inputs).subspan(i, std::min(b, items - i));
    switch (*kind) {
      case ServiceKind::Classification:
        if (mode == BenchMode::Naive) registry.classify(backend_id, chunk[0], 1);
        else registry.classify_batch(backend_id, chunk, 1);
        break;
      case ServiceKind::Regression:
        if (mode == BenchMode::Naive) registry.score(backend_id, chunk[0]);
        else registry.score_batch(backend_id, chunk);
        break;
      case ServiceKind::Retrieval:
        if (mode == BenchMode::Naive) registry.embed(backend_id, chunk[0]);
        else registry.embed_batch(backend_id, chunk);
        break;
    }
    ++r.calls;
  }
  r.wall_time_s = std::chrono::duration<double>(Clock::now() - start).count();
  r.fps = static_cast<double>(items) / r.wall_time_s;
  return r;
}

}  // namespace xcloud::loadgen
