#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "xcloud/hash.hpp"

namespace xcloud {

using Bytes = std::vector<Byte>;
using ByteView = std::span<const Byte>;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const Byte*>(s.data()), s.size()};
}

constexpr std::size_t kEmbeddingDim = 256;

/// Unit-L2, non-negative feature vector.
struct Embedding {
  std::array<double, kEmbeddingDim> vector{};

  bool operator==(const Embedding&) const = default;
};

/// Backend contracts. A backend exposes exactly one of these; the registry
/// owns them and is the only way callers reach them. Implementations must be
/// pure functions of their input and safe to call concurrently.
class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;

  virtual const std::vector<std::string>& labels() const = 0;

  /// Full probability distribution over labels(), summing to 1.
  virtual std::vector<double> distribution(ByteView image) const = 0;

  virtual std::vector<std::vector<double>> distribution_batch(std::span<const Bytes> images) const {
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(distribution(img));
    return out;
  }
};

class RegressorBackend {
 public:
  virtual ~RegressorBackend() = default;

  virtual double low() const = 0;
  virtual double high() const = 0;
  virtual double predict(ByteView input) const = 0;

  virtual std::vector<double> predict_batch(std::span<const Bytes> inputs) const {
    std::vector<double> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) out.push_back(predict(in));
    return out;
  }
};

class EmbedderBackend {
 public:
  virtual ~EmbedderBackend() = default;

  virtual Embedding embed(ByteView image) const = 0;

  virtual std::vector<Embedding> embed_batch(std::span<const Bytes> images) const {
    std::vector<Embedding> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(embed(img));
    return out;
  }
};

using Backend = std::variant<std::shared_ptr<const ClassifierBackend>,
                             std::shared_ptr<const RegressorBackend>,
                             std::shared_ptr<const EmbedderBackend>>;

}  // namespace xcloud
