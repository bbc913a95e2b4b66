#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "xcloud/backend.hpp"
#include "xcloud/error.hpp"
#include "xcloud/hash.hpp"

namespace xcloud {

inline std::uint64_t byte_sum(ByteView bytes) noexcept {
  std::uint64_t s = 0;
  for (Byte b : bytes) s += b;
  return s;
}

/// Deterministic stand-in for a trained classifier.
///
/// For L labels, the peak goes to label index (byte-sum mod L) with logit
/// ln(L) + 1. Every other label i gets logit -u_i, where
/// u_i = unit_fraction(mix64(stable_hash(image) + i)) lies in [0, 1).
/// Confidences are the softmax of those logits, so the peak always holds at
/// least e*L / (e*L + L - 1) > 0.73 of the mass.
class StubClassifier final : public ClassifierBackend {
 public:
  explicit StubClassifier(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) fail(ErrorCode::InvalidArgument, "stub classifier needs labels");
  }

  const std::vector<std::string>& labels() const override { return labels_; }

  std::vector<double> distribution(ByteView image) const override {
    const std::size_t n = labels_.size();
    const std::size_t peak = static_cast<std::size_t>(byte_sum(image) % n);
    const std::uint64_t h = stable_hash(image);
    std::vector<double> w(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double logit = i == peak ? std::log(static_cast<double>(n)) + 1.0
                                     : -unit_fraction(mix64(h + i));
      w[i] = std::exp(logit);
      total += w[i];
    }
    for (double& v : w) v /= total;
    return w;
  }

 private:
  std::vector<std::string> labels_;
};

/// Deterministic stand-in for a trained regressor:
/// low + (stable_hash(input) mod 10001) / 10000 * (high - low).
class StubRegressor final : public RegressorBackend {
 public:
  StubRegressor(double low, double high) : low_(low), high_(high) {
    if (!(low < high)) fail(ErrorCode::InvalidArgument, "stub regressor needs low < high");
  }

  double low() const override { return low_; }
  double high() const override { return high_; }

  double predict(ByteView input) const override {
    const auto bucket = static_cast<double>(stable_hash(input) % 10001);
    return low_ + bucket / 10000.0 * (high_ - low_);
  }

 private:
  double low_;
  double high_;
};

/// 256-bin histogram of raw byte values, L2-normalised.
class HistogramEmbedder final : public EmbedderBackend {
 public:
  Embedding embed(ByteView image) const override {
    if (image.empty()) fail(ErrorCode::EmptyInput, "cannot embed an empty image");
    std::array<std::uint64_t, kEmbeddingDim> counts{};
    for (Byte b : image) ++counts[b];
    double sq = 0.0;
    for (auto c : counts) sq += static_cast<double>(c) * static_cast<double>(c);
    const double norm = std::sqrt(sq);
    Embedding e;
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
      e.vector[i] = static_cast<double>(counts[i]) / norm;
    }
    return e;
  }
};

/// Simulated accelerator cost: a fixed overhead per call plus a cost per item.
struct SyntheticCost {
  std::chrono::microseconds per_call{0};
  std::chrono::microseconds per_item{0};

  void pay(std::size_t items) const {
    const auto d = per_call + per_item * static_cast<std::int64_t>(items);
    if (d.count() > 0) std::this_thread::sleep_for(d);
  }
};

/// Wraps a classifier and charges SyntheticCost per call, so batching pays
/// the per-call overhead once per batch.
class CostedClassifier final : public ClassifierBackend {
 public:
  CostedClassifier(std::shared_ptr<const ClassifierBackend> inner, SyntheticCost cost)
      : inner_(std::move(inner)), cost_(cost) {}

  const std::vector<std::string>& labels() const override { return inner_->labels(); }

  std::vector<double> distribution(ByteView image) const override {
    cost_.pay(1);
    return inner_->distribution(image);
  }

  std::vector<std::vector<double>> distribution_batch(std::span<const Bytes> images) const override {
    cost_.pay(images.size());
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(inner_->distribution(img));
    return out;
  }

 private:
  std::shared_ptr<const ClassifierBackend> inner_;
  SyntheticCost cost_;
};

class CostedRegressor final : public RegressorBackend {
 public:
  CostedRegressor(std::shared_ptr<const RegressorBackend> inner, SyntheticCost cost)
      : inner_(std::move(inner)), cost_(cost) {}

  double low() const override { return inner_->low(); }
  double high() const override { return inner_->high(); }

  double predict(ByteView input) const override {
    cost_.pay(1);
    return inner_->predict(input);
  }

  std::vector<double> predict_batch(std::span<const Bytes> inputs) const override {
    cost_.pay(inputs.size());
    std::vector<double> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) out.push_back(inner_->predict(in));
    return out;
  }

 private:
  std::shared_ptr<const RegressorBackend> inner_;
  SyntheticCost cost_;
};

class CostedEmbedder final : public EmbedderBackend {
 public:
  CostedEmbedder(std::shared_ptr<const EmbedderBackend> inner, SyntheticCost cost)
      : inner_(std::move(inner)), cost_(cost) {}

  Embedding embed(ByteView image) const override {
    cost_.pay(1);
    return inner_->embed(image);
  }

  std::vector<Embedding> embed_batch(std::span<const Bytes> images) const override {
    cost_.pay(images.size());
    std::vector<Embedding> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(inner_->embed(img));
    return out;
  }

 private:
  std::shared_ptr<const EmbedderBackend> inner_;
  SyntheticCost cost_;
};

/// Applies `cost` to whichever backend kind `backend` holds.
inline Backend with_cost(Backend backend, SyntheticCost cost) {
  if (cost.per_call.count() == 0 && cost.per_item.count() == 0) return backend;
  return std::visit(
      [&](auto&& ptr) -> Backend {
        using Ptr = std::decay_t<decltype(ptr)>;
        if constexpr (std::is_same_v<Ptr, std::shared_ptr<const ClassifierBackend>>) {
          return std::shared_ptr<const ClassifierBackend>(
              std::make_shared<CostedClassifier>(ptr, cost));
        } else if constexpr (std::is_same_v<Ptr, std::shared_ptr<const RegressorBackend>>) {
          return std::shared_ptr<const RegressorBackend>(
              std::make_shared<CostedRegressor>(ptr, cost));
        } else {
          return std::shared_ptr<const EmbedderBackend>(
              std::make_shared<CostedEmbedder>(ptr, cost));
        }
      },
      std::move(backend));
}

}  // namespace xcloud
