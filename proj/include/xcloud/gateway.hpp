#pragma once

#include <sodium.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "xcloud/base64.hpp"
#include "xcloud/dispatch.hpp"
#include "xcloud/error.hpp"
#include "xcloud/persistence.hpp"
#include "xcloud/registry.hpp"

namespace xcloud {

struct GatewayConfig {
  std::size_t max_image_bytes = 8u << 20;
  std::size_t max_body_bytes = 12u << 20;
  std::chrono::milliseconds fetch_timeout{5000};
  std::size_t classification_k = 1;
  std::size_t retrieval_k = 5;
};

/// One parsed API call, independent of the transport it arrived on.
struct ApiRequest {
  std::string route;   // without the API prefix, e.g. "cv/plant"
  std::string method;  // "GET", "POST", ...
  std::optional<std::string> imgraw;
  std::optional<std::string> imgurl;
  std::optional<std::string> id;
  std::optional<std::string> user_key;
  std::optional<std::string> terminal_type;  // "0".."4"; api (4) when absent
  std::optional<std::string> k;
  std::optional<std::string> malformed;  // body could not be parsed
};

struct ApiResponse {
  int http_status = 200;
  int status = 0;  // 0 on success, otherwise -http_status
  std::string message = "OK";
  double elapse_ms = 0.0;
  std::optional<nlohmann::json> results;

  bool ok() const noexcept { return status == 0; }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"status", status}, {"message", message}, {"elapse", elapse_ms}};
    if (results) j["results"] = *results;
    return j;
  }

  /// Serialised body; invalid UTF-8 echoed from a request is replaced.
  std::string body() const { return to_json().dump(-1, ' ', false, nlohmann::json::error_handler_t::replace); }

  static ApiResponse error(int http_status, std::string message) {
    ApiResponse r;
    r.http_status = http_status;
    r.status = -http_status;
    r.message = message.empty() ? "error" : std::move(message);
    return r;
  }
};

inline int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownRoute: return 404;
    case ErrorCode::MethodNotAllowed: return 405;
    case ErrorCode::Unauthorized: return 401;
    case ErrorCode::BadRequest:
    case ErrorCode::InvalidArgument:
    case ErrorCode::EmptyInput: return 400;
    case ErrorCode::UpstreamFetchFailed: return 502;
    case ErrorCode::NoHealthyWorker:
    case ErrorCode::EmptyIndex: return 503;
    default: return 500;
  }
}

/// Maps user keys to usernames. Keys already seen are matched by a
/// constant-time scan over every cached key; unseen keys fall through to the
/// store's index.
class Authenticator {
 public:
  explicit Authenticator(const store::Store& store) : store_(store) {}

  std::string authenticate(const std::optional<std::string>& key) {
    if (!key || key->empty()) fail(ErrorCode::Unauthorized, "missing X-API-Key");
    if (key->size() > store::kMaxUserkey * 4) fail(ErrorCode::Unauthorized, "unknown key");
    if (auto user = scan(*key)) return *user;
    std::optional<store::UserRecord> rec;
    try {
      rec = store_.lookup_user_by_key(*key);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotFound) throw;
    }
    if (!rec) fail(ErrorCode::Unauthorized, "unknown key");
    std::unique_lock lock(mutex_);
    cache_.push_back({pad(rec->userkey), rec->username});
    return rec->username;
  }

 private:
  static constexpr std::size_t kPadded = store::kMaxUserkey * 4 + 1;
  using Padded = std::array<unsigned char, kPadded>;

  static Padded pad(std::string_view key) {
    Padded p{};
    std::copy_n(key.begin(), std::min(key.size(), kPadded - 1), p.begin());
    p[kPadded - 1] = static_cast<unsigned char>(key.size());
    return p;
  }

  std::optional<std::string> scan(std::string_view key) const {
    const Padded probe = pad(key);
    const std::string* match = nullptr;
    std::shared_lock lock(mutex_);
    for (const auto& [k, user] : cache_) {
      if (sodium_memcmp(k.data(), probe.data(), kPadded) == 0) match = &user;
    }
    if (match == nullptr) return std::nullopt;
    return *match;
  }

  const store::Store& store_;
  mutable std::shared_mutex mutex_;
  std::vector<std::pair<Padded, std::string>> cache_;
};

/// Hands call records to the store on a background thread, in batches.
/// flush() returns once every record queued before it is durable.
class CallLogger {
 public:
  explicit CallLogger(store::Store& store) : store_(store), thread_([this] { run(); }) {}

  ~CallLogger() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    wake_.notify_all();
    thread_.join();
  }

  CallLogger(const CallLogger&) = delete;
  CallLogger& operator=(const CallLogger&) = delete;

  void log(store::ApiCallRecord rec) {
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(std::move(rec));
      ++enqueued_;
    }
    wake_.notify_one();
  }

  void flush() {
    std::unique_lock lock(mutex_);
    const std::uint64_t target = enqueued_;
    drained_.wait(lock, [&] { return written_ + dropped_ >= target; });
  }

  std::uint64_t written() const {
    std::lock_guard lock(mutex_);
    return written_;
  }

  std::uint64_t dropped() const {
    std::lock_guard lock(mutex_);
    return dropped_;
  }

 private:
  void run() {
    std::unique_lock lock(mutex_);
    for (;;) {
      wake_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty() && stopping_) return;
      std::vector<store::ApiCallRecord> batch(std::make_move_iterator(queue_.begin()),
                                              std::make_move_iterator(queue_.end()));
      queue_.clear();
      lock.unlock();
      const auto [ok, bad] = write(batch);
      lock.lock();
      written_ += ok;
      dropped_ += bad;
      drained_.notify_all();
    }
  }

  std::pair<std::uint64_t, std::uint64_t> write(const std::vector<store::ApiCallRecord>& batch) {
    try {
      store_.record_api_calls(batch);
      return {batch.size(), 0};
    } catch (const Error&) {
    }
    // One bad record must not take the rest of the batch with it.
    std::uint64_t ok = 0;
    std::uint64_t bad = 0;
    for (const auto& rec : batch) {
      try {
        store_.record_api_call(rec);
        ++ok;
      } catch (const Error& e) {
        ++bad;
        std::fprintf(stderr, "xcloud: dropped call record for '%s': %s\n", rec.username.c_str(), e.what());
      }
    }
    return {ok, bad};
  }

  store::Store& store_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable drained_;
  std::deque<store::ApiCallRecord> queue_;
  std::uint64_t enqueued_ = 0;
  std::uint64_t written_ = 0;
  std::uint64_t dropped_ = 0;
  bool stopping_ = false;
  std::thread thread_;
};

/// Fetches the bytes behind an imgurl. Throws UpstreamFetchFailed or BadRequest.
using ImageFetcher =
    std::function<Bytes(const std::string& url, std::chrono::milliseconds timeout, std::size_t max_bytes)>;

namespace gateway_detail {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::optional<std::size_t> parse_positive(std::string_view s) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v == 0) return std::nullopt;
  return v;
}

inline double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace gateway_detail

/// Request pipeline: authenticate, resolve route, validate parameters, obtain
/// the input bytes, dispatch to a worker, run the backend, log the call.
class Gateway {
 public:
  Gateway(Registry& registry, store::Store& store, WorkerPool& pool, ImageFetcher fetcher,
          GatewayConfig config = {})
      : registry_(registry),
        store_(store),
        pool_(pool),
        fetcher_(std::move(fetcher)),
        config_(config),
        auth_(store),
        logger_(store) {}

  const GatewayConfig& config() const noexcept { return config_; }
  Registry& registry() noexcept { return registry_; }
  store::Store& store() noexcept { return store_; }
  WorkerPool& pool() noexcept { return pool_; }

  std::string authenticate(const std::optional<std::string>& key) { return auth_.authenticate(key); }

  /// Never throws. Every request that passes authentication is logged once.
  ApiResponse route_request(const ApiRequest& req) {
    const auto start = std::chrono::steady_clock::now();
    std::string username;
    try {
      username = auth_.authenticate(req.user_key);
    } catch (const Error& e) {
      return finish(ApiResponse::error(http_status_for(e.code()), e.what()), start);
    } catch (const std::exception& e) {
      return finish(ApiResponse::error(500, e.what()), start);
    }

    store::ApiCallRecord rec;
    rec.username = username;
    rec.api_name = store::truncate_chars(req.route, store::kMaxApiName);
    rec.terminal_type = static_cast<int>(store::TerminalType::Api);
    rec.img_path = describe_input(req);

    ApiResponse resp;
    try {
      resp = serve(req, rec);
    } catch (const Error& e) {
      resp = ApiResponse::error(http_status_for(e.code()), e.what());
    } catch (const std::exception& e) {
      resp = ApiResponse::error(500, e.what());
    }
    finish(resp, start);
    rec.api_elapse = resp.elapse_ms;
    rec.api_call_datetime = store::now_ms();
    logger_.log(std::move(rec));
    return resp;
  }

  /// Blocks until every call logged so far is in the store.
  void flush_logs() { logger_.flush(); }

  std::uint64_t dropped_logs() const { return logger_.dropped(); }

 private:
  static ApiResponse& finish(ApiResponse& r, std::chrono::steady_clock::time_point start) {
    r.elapse_ms = gateway_detail::ms_since(start);
    return r;
  }
  static ApiResponse finish(ApiResponse&& r, std::chrono::steady_clock::time_point start) {
    r.elapse_ms = gateway_detail::ms_since(start);
    return std::move(r);
  }

  static std::string describe_input(const ApiRequest& req) {
    if (req.imgurl) return store::truncate_chars(*req.imgurl, store::kMaxImgPath);
    if (req.id) return store::truncate_chars("id:" + *req.id, store::kMaxImgPath);
    if (req.imgraw) return "imgraw:" + gateway_detail::hex64(stable_hash(std::string_view(*req.imgraw)));
    return "-";
  }

  ApiResponse serve(const ApiRequest& req, store::ApiCallRecord& rec) {
    auto desc = registry_.find(req.route);
    if (!desc) fail(ErrorCode::UnknownRoute, "no API at '" + req.route + "'");
    if (req.method != to_string(desc->method)) {
      fail(ErrorCode::MethodNotAllowed, req.route + " accepts " + std::string(to_string(desc->method)) + " only");
    }
    if (req.terminal_type) {
      const auto& t = *req.terminal_type;
      if (t.size() != 1 || t[0] < '0' || t[0] > '4') fail(ErrorCode::BadRequest, "terminal_type must be 0..4");
      rec.terminal_type = t[0] - '0';
    }
    if (req.malformed) fail(ErrorCode::BadRequest, *req.malformed);

    const int given = (req.imgraw ? 1 : 0) + (req.imgurl ? 1 : 0) + (req.id ? 1 : 0);
    if (given != 1) {
      fail(ErrorCode::BadRequest, desc->method == HttpMethod::Get ? "expected exactly one 'id' parameter"
                                                                 : "expected exactly one of imgraw or imgurl");
    }
    Bytes input;
    if (desc->method == HttpMethod::Get) {
      if (!req.id) fail(ErrorCode::BadRequest, req.route + " takes an 'id' parameter");
      if (req.id->empty()) fail(ErrorCode::BadRequest, "empty id");
      input = to_bytes(*req.id);
    } else if (req.imgraw) {
      input = base64_decode(*req.imgraw, config_.max_image_bytes);
    } else if (req.imgurl) {
      input = fetcher_(*req.imgurl, config_.fetch_timeout, config_.max_image_bytes);
      if (input.empty()) fail(ErrorCode::UpstreamFetchFailed, "imgurl returned an empty body");
    } else {
      fail(ErrorCode::BadRequest, req.route + " takes imgraw or imgurl");
    }

    std::optional<std::size_t> k;
    if (req.k) {
      k = gateway_detail::parse_positive(*req.k);
      if (!k) fail(ErrorCode::BadRequest, "k must be a positive integer");
    }

    const std::size_t worker = pool_.dispatch();
    ApiResponse resp;
    pool_.worker(worker).execute([&] { resp.results = invoke(*desc, input, k); });
    return resp;
  }

  nlohmann::json invoke(const ServiceDescriptor& d, const Bytes& input, std::optional<std::size_t> k) {
    using nlohmann::json;
    switch (d.kind) {
      case ServiceKind::Classification: {
        const auto& labels = std::get<LabelSet>(d.output_contract).labels;
        const std::size_t want = k.value_or(config_.classification_k);
        if (want > labels.size()) fail(ErrorCode::BadRequest, "k exceeds the label count");
        auto r = registry_.classify(d.backend_id, input, want);
        json arr = json::array();
        for (const auto& ls : r.top_k) arr.push_back({{"label", ls.label}, {"confidence", ls.confidence}});
        return arr;
      }
      case ServiceKind::Regression: {
        auto r = registry_.score(d.backend_id, input);
        return json{{"score", r.score}};
      }
      case ServiceKind::Retrieval: {
        auto r = registry_.search_face(d.backend_id, input, k.value_or(config_.retrieval_k));
        json arr = json::array();
        for (const auto& m : r.matches) arr.push_back({{"person_id", m.person_id}, {"similarity", m.similarity}});
        return arr;
      }
    }
    fail(ErrorCode::InvalidDescriptor, "unknown service kind");
  }

  Registry& registry_;
  store::Store& store_;
  WorkerPool& pool_;
  ImageFetcher fetcher_;
  GatewayConfig config_;
  Authenticator auth_;
  CallLogger logger_;
};

}  // namespace xcloud
