// xcloud-server: serve the API, manage users, export the store.
//
// Every serve flag also reads an XCLOUD_* environment variable; a flag on the
// command line wins over the environment, which wins over the default.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <pthread.h>
#include <sodium.h>

#include "CLI11.hpp"
#include "xcloud/catalog.hpp"
#include "xcloud/dispatch.hpp"
#include "xcloud/gateway.hpp"
#include "xcloud/http_server.hpp"
#include "xcloud/persistence.hpp"
#include "xcloud/stub_backends.hpp"

namespace {

using namespace xcloud;

struct ServeOptions {
  std::string listen = "127.0.0.1:8080";
  std::size_t workers = 2;
  std::string data_dir = "xcloud-data";
  std::size_t max_image_bytes = 8u << 20;
  std::size_t max_body_bytes = 12u << 20;
  long fetch_timeout_ms = 5000;
  std::string prefix = "/api/";
  std::string faces_dir;
  std::string console_dir;
  long backend_delay_ms = 0;
  std::size_t threads = 64;
  bool fast_hashing = false;
};

std::pair<std::string, int> split_listen(const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) fail(ErrorCode::InvalidArgument, "--listen expects host:port");
  const std::string port = listen.substr(colon + 1);
  if (port.empty() || port.find_first_not_of("0123456789") != std::string::npos || port.size() > 5) {
    fail(ErrorCode::InvalidArgument, "bad port in --listen: " + listen);
  }
  return {listen.substr(0, colon), std::stoi(port)};
}

std::size_t enroll_faces(Registry& registry, const std::filesystem::path& dir) {
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    const Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty()) continue;
    registry.enroll_face("face-histogram", entry.path().stem().string(), bytes);
    ++n;
  }
  return n;
}

int serve(const ServeOptions& o) {
  // Signals go to a dedicated thread so shutdown runs outside a handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  const auto [host, port] = split_listen(o.listen);
  if (o.workers < 1) fail(ErrorCode::InvalidArgument, "--workers must be >= 1");

  Registry registry;
  install_default_catalog(registry, SyntheticCost{std::chrono::milliseconds(o.backend_delay_ms), {}});
  if (!o.faces_dir.empty()) {
    std::fprintf(stderr, "enrolled %zu faces from %s\n", enroll_faces(registry, o.faces_dir), o.faces_dir.c_str());
  }

  store::Store store(o.data_dir,
                     o.fast_hashing ? store::CredentialHashing::Minimal : store::CredentialHashing::Interactive);

  std::vector<std::shared_ptr<Worker>> workers;
  for (std::size_t i = 0; i < o.workers; ++i) workers.push_back(std::make_shared<LocalWorker>("W" + std::to_string(i + 1)));
  WorkerPool pool(std::move(workers));
  HealthMonitor monitor(pool);

  GatewayConfig config;
  config.max_image_bytes = o.max_image_bytes;
  config.max_body_bytes = o.max_body_bytes;
  config.fetch_timeout = std::chrono::milliseconds(o.fetch_timeout_ms);
  Gateway gateway(registry, store, pool, fetch_image_url, config);

  HttpOptions http_options;
  http_options.prefix = o.prefix;
  http_options.console_dir = o.console_dir;
  http_options.threads = o.threads;
  HttpGateway http(gateway, http_options);
  const int bound = http.bind(host, port);

  std::jthread waiter([&](std::stop_token st) {
    int sig = 0;
    sigwait(&signals, &sig);
    if (!st.stop_requested()) std::fprintf(stderr, "signal %d, shutting down\n", sig);
    http.stop();
  });

  std::fprintf(stderr, "xcloud-server listening on %s:%d%s (%zu workers, data in %s)\n", host.c_str(), bound,
               http.prefix().c_str(), o.workers, o.data_dir.c_str());
  http.serve();
  waiter.request_stop();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();

  gateway.flush_logs();
  if (gateway.dropped_logs() > 0) {
    std::fprintf(stderr, "warning: %llu call records could not be stored\n",
                 static_cast<unsigned long long>(gateway.dropped_logs()));
  }
  return 0;
}

std::string random_userkey() {
  if (sodium_init() < 0) fail(ErrorCode::StorageFailure, "libsodium initialisation failed");
  static constexpr char kAlphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string key(store::kMaxUserkey, ' ');
  for (auto& c : key) c = kAlphabet[randombytes_uniform(sizeof kAlphabet - 1)];
  return key;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xcloud-server: AI inference API gateway"};
  app.require_subcommand(1);

  ServeOptions so;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP gateway");
  serve_cmd->add_option("--listen", so.listen, "host:port to bind")->envname("XCLOUD_LISTEN")->capture_default_str();
  serve_cmd->add_option("--workers", so.workers, "Executor workers behind the round-robin dispatcher")
      ->envname("XCLOUD_WORKERS")
      ->capture_default_str();
  serve_cmd->add_option("--data-dir", so.data_dir, "Directory holding the database")
      ->envname("XCLOUD_DATA_DIR")
      ->capture_default_str();
  serve_cmd->add_option("--max-image-bytes", so.max_image_bytes, "Decoded image size cap")
      ->envname("XCLOUD_MAX_IMAGE_BYTES")
      ->capture_default_str();
  serve_cmd->add_option("--max-body-bytes", so.max_body_bytes, "Request body size cap")
      ->envname("XCLOUD_MAX_BODY_BYTES")
      ->capture_default_str();
  serve_cmd->add_option("--fetch-timeout-ms", so.fetch_timeout_ms, "imgurl fetch timeout")
      ->envname("XCLOUD_FETCH_TIMEOUT_MS")
      ->capture_default_str();
  serve_cmd->add_option("--prefix", so.prefix, "URL prefix of the API routes")
      ->envname("XCLOUD_PREFIX")
      ->capture_default_str();
  serve_cmd->add_option("--faces-dir", so.faces_dir, "Enroll every file here for cv/facesearch (id = file stem)")
      ->envname("XCLOUD_FACES_DIR")
      ->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--console-dir", so.console_dir, "Static console bundle served under /console/")
      ->envname("XCLOUD_CONSOLE_DIR")
      ->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--backend-delay-ms", so.backend_delay_ms, "Synthetic per-call cost added to every backend")
      ->envname("XCLOUD_BACKEND_DELAY_MS")
      ->capture_default_str();
  serve_cmd->add_option("--threads", so.threads, "HTTP handler threads")
      ->envname("XCLOUD_THREADS")
      ->capture_default_str();
  serve_cmd->add_flag("--fast-hashing", so.fast_hashing, "Cheap credential hashing (tests only)")
      ->envname("XCLOUD_FAST_HASHING");

  std::string data_dir = "xcloud-data";
  auto* user_cmd = app.add_subcommand("user", "Manage users");
  user_cmd->require_subcommand(1);
  const auto add_data_dir = [&data_dir](CLI::App* cmd) {
    cmd->add_option("--data-dir", data_dir, "Directory holding the database")
        ->envname("XCLOUD_DATA_DIR")
        ->capture_default_str();
  };
  store::NewUser nu;
  auto* add_cmd = user_cmd->add_subcommand("add", "Register a user and print its API key");
  add_cmd->add_option("--username", nu.username)->required();
  add_cmd->add_option("--email", nu.email)->required();
  add_cmd->add_option("--organization", nu.user_organization)->required();
  add_cmd->add_option("--password", nu.credential)->required();
  add_cmd->add_option("--userkey", nu.userkey, "API key; random when omitted");
  add_cmd->add_option("--register-type", nu.register_type, "0 web form, 1 imported, 2 admin-created")
      ->capture_default_str();
  auto* list_cmd = user_cmd->add_subcommand("list", "List users");
  add_data_dir(add_cmd);
  add_data_dir(list_cmd);

  std::string export_dir;
  auto* export_cmd = app.add_subcommand("export", "Write users.csv and api_calls.csv");
  add_data_dir(export_cmd);
  export_cmd->add_option("--out", export_dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(so);
    if (*add_cmd) {
      if (nu.userkey.empty()) nu.userkey = random_userkey();
      store::Store store(data_dir);
      store.create_user(nu);
      std::cout << nu.userkey << "\n";
      return 0;
    }
    if (*list_cmd) {
      store::Store store(data_dir);
      for (const auto& u : store.list_users()) {
        std::cout << u.username << "\t" << u.email << "\t" << u.user_organization << "\t"
                  << store::format_timestamp(u.register_datetime) << "\n";
      }
      return 0;
    }
    if (*export_cmd) {
      store::Store store(data_dir);
      std::filesystem::create_directories(export_dir);
      store.export_csv(export_dir);
      std::cout << "wrote " << (std::filesystem::path(export_dir) / "users.csv").string() << " and "
                << (std::filesystem::path(export_dir) / "api_calls.csv").string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
