#pragma once

#include <array>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "xcloud/registry.hpp"
#include "xcloud/stub_backends.hpp"

namespace xcloud {

/// The eight public APIs, in the order they are documented.
struct RouteSpec {
  std::string_view route;
  HttpMethod method;
  std::string_view description;
};

inline constexpr std::array<RouteSpec, 8> kPublicRoutes{{
    {"cv/mcloud/skin", HttpMethod::Post, "skin disease recognition"},
    {"cv/fbp", HttpMethod::Post, "facial beauty prediction"},
    {"cv/nsfw", HttpMethod::Post, "pornography image recognition"},
    {"cv/pdr", HttpMethod::Post, "plant disease recognition"},
    {"cv/food", HttpMethod::Post, "food recognition"},
    {"cv/plant", HttpMethod::Post, "plant recognition"},
    {"cv/facesearch", HttpMethod::Post, "face retrieval"},
    {"dm/zhihuliveeval", HttpMethod::Get, "Zhihu Live rating"},
}};

inline std::vector<std::string> numbered_labels(std::string_view prefix, std::size_t count) {
  std::vector<std::string> out;
  out.reserve(count);
  char buf[32];
  for (std::size_t i = 0; i < count; ++i) {
    std::snprintf(buf, sizeof buf, "%03zu", i);
    out.push_back(std::string(prefix) + "-" + buf);
  }
  return out;
}

namespace catalog_detail {

inline void add_classifier(Registry& reg, std::string_view route, std::string_view description,
                           const std::string& backend_id, std::vector<std::string> labels,
                           SyntheticCost cost) {
  Backend b = std::shared_ptr<const ClassifierBackend>(std::make_shared<StubClassifier>(labels));
  reg.register_backend(backend_id, with_cost(std::move(b), cost));
  reg.register_service({std::string(route), HttpMethod::Post, ServiceKind::Classification, backend_id,
                        LabelSet{std::move(labels)}, std::string(description)});
}

inline void add_regressor(Registry& reg, std::string_view route, HttpMethod method,
                          std::string_view description, const std::string& backend_id,
                          ScoreRange range, SyntheticCost cost) {
  Backend b = std::shared_ptr<const RegressorBackend>(std::make_shared<StubRegressor>(range.low, range.high));
  reg.register_backend(backend_id, with_cost(std::move(b), cost));
  reg.register_service({std::string(route), method, ServiceKind::Regression, backend_id, range,
                        std::string(description)});
}

}  // namespace catalog_detail

/// Registers the stub backends and the eight public services. `cost` is
/// charged on every backend call (zero by default).
inline void install_default_catalog(Registry& reg, SyntheticCost cost = {}) {
  using catalog_detail::add_classifier;
  using catalog_detail::add_regressor;
  add_classifier(reg, "cv/mcloud/skin", "skin disease recognition", "skin-stub",
                 numbered_labels("skin", 198), cost);
  add_regressor(reg, "cv/fbp", HttpMethod::Post, "facial beauty prediction", "fbp-stub", {1.0, 5.0},
                cost);
  add_classifier(reg, "cv/nsfw", "pornography image recognition", "nsfw-stub",
                 {"drawings", "hentai", "neutral", "porn", "sexy"}, cost);
  add_classifier(reg, "cv/pdr", "plant disease recognition", "pdr-stub",
                 numbered_labels("disease", 61), cost);
  add_classifier(reg, "cv/food", "food recognition", "food-stub", numbered_labels("food", 251), cost);
  add_classifier(reg, "cv/plant", "plant recognition", "plant-stub", numbered_labels("plant", 998),
                 cost);

  Backend faces = std::shared_ptr<const EmbedderBackend>(std::make_shared<HistogramEmbedder>());
  reg.register_backend("face-histogram", with_cost(std::move(faces), cost));
  reg.register_service({"cv/facesearch", HttpMethod::Post, ServiceKind::Retrieval, "face-histogram",
                        ScoreRange{-1.0, 1.0}, "face retrieval"});

  add_regressor(reg, "dm/zhihuliveeval", HttpMethod::Get, "Zhihu Live rating", "zhihulive-stub",
                {0.0, 5.0}, cost);
}

}  // namespace xcloud
