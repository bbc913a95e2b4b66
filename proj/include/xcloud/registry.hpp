#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "xcloud/backend.hpp"
#include "xcloud/error.hpp"
#include "xcloud/face_index.hpp"

namespace xcloud {

enum class HttpMethod { Post, Get };
enum class ServiceKind { Classification, Regression, Retrieval };

constexpr std::string_view to_string(HttpMethod m) { return m == HttpMethod::Post ? "POST" : "GET"; }

constexpr std::string_view to_string(ServiceKind k) {
  switch (k) {
    case ServiceKind::Classification: return "classification";
    case ServiceKind::Regression: return "regression";
    case ServiceKind::Retrieval: return "retrieval";
  }
  return "unknown";
}

struct LabelSet {
  std::vector<std::string> labels;
  bool operator==(const LabelSet&) const = default;
};

struct ScoreRange {
  double low = 0.0;
  double high = 1.0;
  bool operator==(const ScoreRange&) const = default;
};

using OutputContract = std::variant<LabelSet, ScoreRange>;

struct ServiceDescriptor {
  std::string route;  // e.g. "cv/plant", no leading slash
  HttpMethod method = HttpMethod::Post;
  ServiceKind kind = ServiceKind::Classification;
  std::string backend_id;
  OutputContract output_contract;
  std::string description;

  bool operator==(const ServiceDescriptor&) const = default;
};

struct LabelScore {
  std::string label;
  double confidence = 0.0;
  bool operator==(const LabelScore&) const = default;
};

struct ClassificationResult {
  std::vector<LabelScore> top_k;
  double elapsed_ms = 0.0;
};

struct RegressionResult {
  double score = 0.0;
  double elapsed_ms = 0.0;
};

struct RetrievalResult {
  std::vector<FaceMatch> matches;
  double elapsed_ms = 0.0;
};

inline bool is_valid_route(std::string_view route) {
  if (route.empty() || route.front() == '/' || route.back() == '/') return false;
  for (std::size_t i = 0; i < route.size(); ++i) {
    const char c = route[i];
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
                    (c == '/' && route[i - 1] != '/');
    if (!ok) return false;
  }
  return true;
}

inline void validate(const ServiceDescriptor& d) {
  if (!is_valid_route(d.route)) fail(ErrorCode::InvalidDescriptor, "bad route '" + d.route + "'");
  if (d.backend_id.empty()) fail(ErrorCode::InvalidDescriptor, d.route + ": empty backend_id");
  switch (d.kind) {
    case ServiceKind::Classification: {
      const auto* set = std::get_if<LabelSet>(&d.output_contract);
      if (set == nullptr || set->labels.empty()) {
        fail(ErrorCode::InvalidDescriptor, d.route + ": classification needs a non-empty label set");
      }
      break;
    }
    case ServiceKind::Regression:
    case ServiceKind::Retrieval: {
      const auto* range = std::get_if<ScoreRange>(&d.output_contract);
      if (range == nullptr || !(range->low < range->high)) {
        fail(ErrorCode::InvalidDescriptor, d.route + ": needs a score range with low < high");
      }
      break;
    }
  }
}

/// Orders indices by descending confidence, ties by ascending label.
inline std::vector<std::size_t> rank_labels(const std::vector<double>& conf,
                                            const std::vector<std::string>& labels) {
  std::vector<std::size_t> order(conf.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (conf[a] != conf[b]) return conf[a] > conf[b];
    return labels[a] < labels[b];
  });
  return order;
}

/// Service catalog plus backend table. Reads are concurrent; registrations
/// and enrollments are serialised.
class Registry {
 public:
  void register_backend(const std::string& id, Backend backend) {
    if (id.empty()) fail(ErrorCode::InvalidArgument, "backend id must not be empty");
    std::unique_lock lock(mutex_);
    if (backends_.contains(id)) fail(ErrorCode::InvalidArgument, "backend '" + id + "' already registered");
    if (auto* emb = std::get_if<std::shared_ptr<const EmbedderBackend>>(&backend)) {
      faces_.emplace(id, std::make_shared<FaceIndex>(*emb));
    }
    backends_.emplace(id, std::move(backend));
  }

  void register_service(const ServiceDescriptor& d) {
    validate(d);
    std::unique_lock lock(mutex_);
    if (services_.contains(d.route)) fail(ErrorCode::DuplicateRoute, d.route);
    if (auto it = backends_.find(d.backend_id); it != backends_.end()) {
      check_backend_matches(d, it->second);
    }
    services_.emplace(d.route, d);
  }

  ServiceDescriptor lookup(const std::string& route) const {
    std::shared_lock lock(mutex_);
    auto it = services_.find(route);
    if (it == services_.end()) fail(ErrorCode::UnknownRoute, route);
    return it->second;
  }

  std::optional<ServiceDescriptor> find(const std::string& route) const {
    std::shared_lock lock(mutex_);
    auto it = services_.find(route);
    if (it == services_.end()) return std::nullopt;
    return it->second;
  }

  /// All services in route order.
  std::vector<ServiceDescriptor> services() const {
    std::shared_lock lock(mutex_);
    std::vector<ServiceDescriptor> out;
    for (const auto& [route, d] : services_) out.push_back(d);
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return services_.size();
  }

  bool has_backend(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return backends_.contains(id);
  }

  std::optional<ServiceKind> backend_kind(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = backends_.find(id);
    if (it == backends_.end()) return std::nullopt;
    return kind_of(it->second);
  }

  ClassificationResult classify(const std::string& backend_id, ByteView image, std::size_t k) const {
    auto backend = get<ClassifierBackend>(backend_id);
    if (image.empty()) fail(ErrorCode::EmptyInput, "empty image");
    check_k(k, backend->labels().size());
    const auto start = std::chrono::steady_clock::now();
    ClassificationResult r;
    r.top_k = top_k(backend->distribution(image), backend->labels(), k);
    r.elapsed_ms = elapsed_since(start);
    return r;
  }

  std::vector<ClassificationResult> classify_batch(const std::string& backend_id,
                                                   std::span<const Bytes> images,
                                                   std::size_t k) const {
    auto backend = get<ClassifierBackend>(backend_id);
    for (const auto& img : images) {
      if (img.empty()) fail(ErrorCode::EmptyInput, "empty image in batch");
    }
    check_k(k, backend->labels().size());
    const auto start = std::chrono::steady_clock::now();
    auto dists = backend->distribution_batch(images);
    const double elapsed = elapsed_since(start);
    std::vector<ClassificationResult> out;
    out.reserve(dists.size());
    for (const auto& d : dists) out.push_back({top_k(d, backend->labels(), k), elapsed});
    return out;
  }

  /// Full distribution, label order as the backend declares it.
  std::vector<double> distribution(const std::string& backend_id, ByteView image) const {
    auto backend = get<ClassifierBackend>(backend_id);
    if (image.empty()) fail(ErrorCode::EmptyInput, "empty image");
    return backend->distribution(image);
  }

  std::vector<std::string> labels(const std::string& backend_id) const {
    return get<ClassifierBackend>(backend_id)->labels();
  }

  RegressionResult score(const std::string& backend_id, ByteView input) const {
    auto backend = get<RegressorBackend>(backend_id);
    if (input.empty()) fail(ErrorCode::EmptyInput, "empty input");
    const auto start = std::chrono::steady_clock::now();
    RegressionResult r;
    r.score = std::clamp(backend->predict(input), backend->low(), backend->high());
    r.elapsed_ms = elapsed_since(start);
    return r;
  }

  std::vector<RegressionResult> score_batch(const std::string& backend_id,
                                            std::span<const Bytes> inputs) const {
    auto backend = get<RegressorBackend>(backend_id);
    for (const auto& in : inputs) {
      if (in.empty()) fail(ErrorCode::EmptyInput, "empty input in batch");
    }
    const auto start = std::chrono::steady_clock::now();
    auto scores = backend->predict_batch(inputs);
    const double elapsed = elapsed_since(start);
    std::vector<RegressionResult> out;
    out.reserve(scores.size());
    for (double s : scores) out.push_back({std::clamp(s, backend->low(), backend->high()), elapsed});
    return out;
  }

  Embedding embed(const std::string& backend_id, ByteView image) const {
    auto backend = get<EmbedderBackend>(backend_id);
    if (image.empty()) fail(ErrorCode::EmptyInput, "empty image");
    return backend->embed(image);
  }

  std::vector<Embedding> embed_batch(const std::string& backend_id, std::span<const Bytes> images) const {
    auto backend = get<EmbedderBackend>(backend_id);
    for (const auto& img : images) {
      if (img.empty()) fail(ErrorCode::EmptyInput, "empty image in batch");
    }
    return backend->embed_batch(images);
  }

  void enroll_face(const std::string& backend_id, const std::string& person_id, ByteView image) {
    face_index(backend_id).enroll(person_id, image);
  }

  RetrievalResult search_face(const std::string& backend_id, ByteView image, std::size_t k) const {
    const auto start = std::chrono::steady_clock::now();
    RetrievalResult r;
    r.matches = face_index(backend_id).search(image, k);
    r.elapsed_ms = elapsed_since(start);
    return r;
  }

  FaceIndex& face_index(const std::string& backend_id) const {
    std::shared_lock lock(mutex_);
    auto it = faces_.find(backend_id);
    if (it == faces_.end()) {
      if (backends_.contains(backend_id)) {
        fail(ErrorCode::WrongBackendKind, "backend '" + backend_id + "' is not an embedder");
      }
      fail(ErrorCode::UnknownBackend, backend_id);
    }
    return *it->second;
  }

 private:
  static ServiceKind kind_of(const Backend& b) {
    switch (b.index()) {
      case 0: return ServiceKind::Classification;
      case 1: return ServiceKind::Regression;
      default: return ServiceKind::Retrieval;
    }
  }

  static void check_backend_matches(const ServiceDescriptor& d, const Backend& b) {
    if (kind_of(b) != d.kind) {
      fail(ErrorCode::InvalidDescriptor, d.route + ": backend '" + d.backend_id + "' is a " +
                                             std::string(to_string(kind_of(b))) + " backend");
    }
    if (const auto* cls = std::get_if<std::shared_ptr<const ClassifierBackend>>(&b)) {
      if ((*cls)->labels() != std::get<LabelSet>(d.output_contract).labels) {
        fail(ErrorCode::InvalidDescriptor, d.route + ": label set differs from backend's");
      }
    }
  }

  template <typename Interface>
  std::shared_ptr<const Interface> get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = backends_.find(id);
    if (it == backends_.end()) fail(ErrorCode::UnknownBackend, id);
    const auto* p = std::get_if<std::shared_ptr<const Interface>>(&it->second);
    if (p == nullptr) fail(ErrorCode::WrongBackendKind, "backend '" + id + "' has another kind");
    return *p;
  }

  static void check_k(std::size_t k, std::size_t labels) {
    if (k == 0 || k > labels) {
      fail(ErrorCode::InvalidArgument,
           "k=" + std::to_string(k) + " outside [1, " + std::to_string(labels) + "]");
    }
  }

  static std::vector<LabelScore> top_k(const std::vector<double>& dist,
                                       const std::vector<std::string>& labels, std::size_t k) {
    const auto order = rank_labels(dist, labels);
    std::vector<LabelScore> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back({labels[order[i]], dist[order[i]]});
    return out;
  }

  static double elapsed_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }

  mutable std::shared_mutex mutex_;
  std::map<std::string, ServiceDescriptor> services_;
  std::map<std::string, Backend> backends_;
  std::map<std::string, std::shared_ptr<FaceIndex>> faces_;
};

}  // namespace xcloud
