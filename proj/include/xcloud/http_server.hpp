#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <regex>
#include <string>
#include <thread>
#include <utility>

#include "json.hpp"
#include "xcloud/error.hpp"
#include "xcloud/gateway.hpp"
#include "xcloud/http.hpp"

namespace xcloud {

struct ParsedUrl {
  std::string scheme;  // "http" or "https"
  std::string host;
  int port = 0;
  std::string path;  // includes the query, "/" when absent
};

inline ParsedUrl parse_http_url(const std::string& url) {
  static const std::regex re(R"(^(https?)://(\[[0-9A-Fa-f:.]+\]|[A-Za-z0-9._~%-]+)(?::([0-9]{1,5}))?([/?][^\s#]*)?(#\S*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) fail(ErrorCode::BadRequest, "imgurl is not an absolute http(s) URL");
  ParsedUrl out;
  out.scheme = m[1];
  out.host = m[2];
  out.port = m[3].matched ? std::stoi(m[3]) : (out.scheme == "https" ? 443 : 80);
  if (out.port < 1 || out.port > 65535) fail(ErrorCode::BadRequest, "imgurl port out of range");
  out.path = m[4].matched ? std::string(m[4]) : "/";
  if (out.path.front() == '?') out.path.insert(out.path.begin(), '/');
  return out;
}

/// GET `url` and return the body of a 200 response. The whole exchange must
/// finish within `timeout` and the body must not exceed `max_bytes`.
inline Bytes fetch_image_url(const std::string& url, std::chrono::milliseconds timeout, std::size_t max_bytes) {
  const ParsedUrl u = parse_http_url(url);
  httplib::Client client(u.scheme + "://" + u.host + ":" + std::to_string(u.port));
  const auto to_sec = [](std::chrono::milliseconds ms) {
    return std::pair<time_t, time_t>(ms.count() / 1000, (ms.count() % 1000) * 1000);
  };
  const auto [sec, usec] = to_sec(timeout);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  client.set_follow_location(true);

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  Bytes body;
  bool oversized = false;
  bool late = false;
  auto res = client.Get(u.path, [&](const char* data, std::size_t len) {
    if (body.size() + len > max_bytes) {
      oversized = true;
      return false;
    }
    if (std::chrono::steady_clock::now() > deadline) {
      late = true;
      return false;
    }
    body.insert(body.end(), data, data + len);
    return true;
  });
  if (oversized) fail(ErrorCode::UpstreamFetchFailed, "image at imgurl exceeds " + std::to_string(max_bytes) + " bytes");
  if (late) fail(ErrorCode::UpstreamFetchFailed, "imgurl fetch timed out");
  if (!res) fail(ErrorCode::UpstreamFetchFailed, "imgurl fetch failed: " + httplib::to_string(res.error()));
  if (res->status != 200) fail(ErrorCode::UpstreamFetchFailed, "imgurl answered HTTP " + std::to_string(res->status));
  return body;
}

struct HttpOptions {
  std::string prefix = "/api/";
  std::filesystem::path console_dir;  // served under /console/ when set
  std::size_t threads = 64;
};

/// Builds the transport-independent request from an HTTP request.
inline ApiRequest to_api_request(const httplib::Request& http, std::string route) {
  ApiRequest req;
  req.route = std::move(route);
  req.method = http.method;
  if (http.has_header("X-API-Key")) req.user_key = http.get_header_value("X-API-Key");

  auto assign = [&](const std::string& name, std::string value) {
    std::optional<std::string>* slot = nullptr;
    if (name == "imgraw") slot = &req.imgraw;
    else if (name == "imgurl") slot = &req.imgurl;
    else if (name == "id") slot = &req.id;
    else if (name == "terminal_type") slot = &req.terminal_type;
    else if (name == "k") slot = &req.k;
    if (slot == nullptr) return;
    if (slot->has_value()) {
      req.malformed = "parameter '" + name + "' given more than once";
      return;
    }
    *slot = std::move(value);
  };

  for (const auto& [name, value] : http.params) assign(name, value);

  const auto content_type = http.get_header_value("Content-Type");
  if (content_type.rfind("application/json", 0) == 0 && !http.body.empty()) {
    auto body = nlohmann::json::parse(http.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) {
      req.malformed = "body is not a JSON object";
    } else {
      for (const auto& [name, value] : body.items()) {
        if (value.is_string()) {
          assign(name, value.get<std::string>());
        } else if (value.is_number_integer() || value.is_number_unsigned()) {
          assign(name, value.dump());
        } else {
          req.malformed = "parameter '" + name + "' must be a string";
        }
      }
    }
  }
  return req;
}

/// HTTP/1.1 front end: the API routes under a prefix, /healthz, the caller's
/// call log at /calls, and the console bundle under /console/.
class HttpGateway {
 public:
  HttpGateway(Gateway& gateway, HttpOptions options = {}) : gateway_(gateway), options_(std::move(options)) {
    if (options_.prefix.empty() || options_.prefix.front() != '/') options_.prefix.insert(0, "/");
    if (options_.prefix.back() != '/') options_.prefix.push_back('/');
    const std::size_t threads = options_.threads == 0 ? 1 : options_.threads;
    server_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server_.set_payload_max_length(gateway_.config().max_body_bytes);
    server_.set_keep_alive_max_count(1000);
    install_routes();
  }

  ~HttpGateway() { stop(); }

  HttpGateway(const HttpGateway&) = delete;
  HttpGateway& operator=(const HttpGateway&) = delete;

  /// Binds `host:port`; port 0 picks a free one. Returns the bound port.
  int bind(const std::string& host, int port) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ <= 0) fail(ErrorCode::StorageFailure, "cannot bind " + host + ":" + std::to_string(port));
    return port_;
  }

  int port() const noexcept { return port_; }
  const std::string& prefix() const noexcept { return options_.prefix; }

  /// Serves on the calling thread until stop().
  void serve() { server_.listen_after_bind(); }

  /// Serves on a background thread; returns once the server accepts.
  void start() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  httplib::Server& server() noexcept { return server_; }

 private:
  static void reply(httplib::Response& res, const ApiResponse& api) {
    res.status = api.http_status;
    res.set_content(api.body(), "application/json");
  }

  static std::string escape_regex(const std::string& s) {
    static const std::regex special(R"([.^$|()\[\]{}*+?\\])");
    return std::regex_replace(s, special, R"(\$&)");
  }

  void install_routes() {
    const std::string pattern = escape_regex(options_.prefix) + "(.*)";
    auto api = [this](const httplib::Request& http, httplib::Response& res) {
      reply(res, gateway_.route_request(to_api_request(http, http.matches[1])));
    };
    server_.Get(pattern, api);
    server_.Post(pattern, api);
    server_.Put(pattern, api);
    server_.Delete(pattern, api);
    server_.Patch(pattern, api);
    server_.Options(pattern, api);

    server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      const bool serving = gateway_.pool().healthy_count() > 0;
      res.status = serving ? 200 : 503;
      res.set_content(serving ? R"({"status":"serving"})" : R"({"status":"no healthy worker"})",
                      "application/json");
    });

    server_.Get("/calls", [this](const httplib::Request& http, httplib::Response& res) {
      reply(res, list_calls(http));
    });

    if (!options_.console_dir.empty()) server_.set_mount_point("/console", options_.console_dir.string());

    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      reply(res, ApiResponse::error(res.status, httplib::status_message(res.status)));
      return httplib::Server::HandlerResponse::Handled;
    });
  }

  ApiResponse list_calls(const httplib::Request& http) {
    const auto start = std::chrono::steady_clock::now();
    ApiResponse resp;
    try {
      std::optional<std::string> key;
      if (http.has_header("X-API-Key")) key = http.get_header_value("X-API-Key");
      store::CallFilter filter;
      filter.username = gateway_.authenticate(key);
      if (http.has_param("api_name")) filter.api_name = http.get_param_value("api_name");
      filter.limit = 20;
      if (http.has_param("limit")) {
        auto limit = gateway_detail::parse_positive(http.get_param_value("limit"));
        if (!limit) fail(ErrorCode::BadRequest, "limit must be a positive integer");
        filter.limit = std::min<std::size_t>(*limit, 1000);
      }
      gateway_.flush_logs();
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& r : gateway_.store().query_calls(filter)) {
        rows.push_back({{"username", r.username},
                        {"api_name", r.api_name},
                        {"api_elapse", r.api_elapse},
                        {"api_call_datetime", store::format_timestamp(r.api_call_datetime)},
                        {"terminal_type", r.terminal_type},
                        {"img_path", r.img_path}});
      }
      resp.results = std::move(rows);
    } catch (const Error& e) {
      resp = ApiResponse::error(http_status_for(e.code()), e.what());
    }
    resp.elapse_ms = gateway_detail::ms_since(start);
    return resp;
  }

  Gateway& gateway_;
  HttpOptions options_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace xcloud
