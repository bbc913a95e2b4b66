#pragma once

#include <algorithm>
#include <iterator>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "xcloud/backend.hpp"
#include "xcloud/error.hpp"

namespace xcloud {

struct FaceMatch {
  std::string person_id;
  double similarity = 0.0;

  bool operator==(const FaceMatch&) const = default;
};

inline double cosine_of_units(const Embedding& a, const Embedding& b) {
  double dot = 0.0;
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) dot += a.vector[i] * b.vector[i];
  return std::clamp(dot, -1.0, 1.0);
}

/// Exhaustive cosine-similarity index over enrolled embeddings.
/// Single writer, many readers.
class FaceIndex {
 public:
  static constexpr double kTieTolerance = 1e-12;

  explicit FaceIndex(std::shared_ptr<const EmbedderBackend> embedder)
      : embedder_(std::move(embedder)) {}

  void enroll(const std::string& person_id, ByteView image) {
    if (person_id.empty()) fail(ErrorCode::EmptyInput, "person_id must not be empty");
    if (image.empty()) fail(ErrorCode::EmptyInput, "cannot enroll an empty image");
    Embedding e = embedder_->embed(image);
    std::unique_lock lock(mutex_);
    entries_.insert_or_assign(person_id, e);
  }

  bool remove(const std::string& person_id) {
    std::unique_lock lock(mutex_);
    return entries_.erase(person_id) > 0;
  }

  /// Top-k by cosine similarity, descending; ties by person_id ascending.
  std::vector<FaceMatch> search(ByteView image, std::size_t k) const {
    if (k == 0) fail(ErrorCode::InvalidArgument, "k must be positive");
    if (image.empty()) fail(ErrorCode::EmptyInput, "cannot search with an empty image");
    const Embedding query = embedder_->embed(image);

    std::shared_lock lock(mutex_);
    if (entries_.empty()) fail(ErrorCode::EmptyIndex, "no faces enrolled");
    std::vector<FaceMatch> all;
    all.reserve(entries_.size());
    // std::map iterates ids in ascending order; stable_sort keeps that for ties.
    for (const auto& [id, e] : entries_) all.push_back({id, cosine_of_units(query, e)});
    lock.unlock();

    std::stable_sort(all.begin(), all.end(),
                     [](const FaceMatch& a, const FaceMatch& b) { return a.similarity > b.similarity; });
    // Equal cosines reached through different rounding can differ in the last
    // bits; runs of neighbours within kTieTolerance count as one tie.
    for (auto run = all.begin(); run != all.end();) {
      auto end = std::next(run);
      while (end != all.end() && std::prev(end)->similarity - end->similarity <= kTieTolerance) ++end;
      std::sort(run, end, [](const FaceMatch& a, const FaceMatch& b) { return a.person_id < b.person_id; });
      run = end;
    }
    if (all.size() > k) all.resize(k);
    return all;
  }

  std::optional<Embedding> find(const std::string& person_id) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(person_id);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

 private:
  std::shared_ptr<const EmbedderBackend> embedder_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Embedding> entries_;
};

}  // namespace xcloud
