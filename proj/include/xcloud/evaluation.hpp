#pragma once

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "xcloud/error.hpp"
#include "xcloud/metrics.hpp"
#include "xcloud/registry.hpp"

namespace xcloud {

enum class MetricName { Acc, PC, MAE };

constexpr std::string_view to_string(MetricName m) {
  switch (m) {
    case MetricName::Acc: return "Acc";
    case MetricName::PC: return "PC";
    case MetricName::MAE: return "MAE";
  }
  return "?";
}

struct EvaluationRow {
  std::string service;
  std::string model;
  std::string dataset;
  MetricName metric = MetricName::Acc;
  double value = 0.0;
};

/// Names written into report rows; the backend id is the default model name.
struct EvaluationLabels {
  std::string service;
  std::string model;
  std::string dataset;
};

struct EvaluationReport {
  std::vector<EvaluationRow> rows;
};

struct LabeledImage {
  Bytes image;
  std::string true_label;
};

struct ScoredInput {
  Bytes input;
  double true_score = 0.0;
};

/// "Acc=0.9012" style cell, four decimals.
inline std::string format_metric(MetricName metric, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s=%.4f", std::string(to_string(metric)).c_str(), value);
  return buf;
}

inline std::string format_metric(const EvaluationRow& row) { return format_metric(row.metric, row.value); }

inline EvaluationRow evaluate_classifier(const Registry& registry, const std::string& backend_id,
                                         const std::vector<LabeledImage>& dataset,
                                         EvaluationLabels names = {}) {
  if (!registry.has_backend(backend_id)) fail(ErrorCode::UnknownBackend, backend_id);
  if (dataset.empty()) fail(ErrorCode::EmptyDataset, "classifier evaluation needs data");
  std::vector<std::string> predicted;
  std::vector<std::string> truth;
  predicted.reserve(dataset.size());
  truth.reserve(dataset.size());
  for (const auto& item : dataset) {
    predicted.push_back(registry.classify(backend_id, item.image, 1).top_k.front().label);
    truth.push_back(item.true_label);
  }
  return {std::move(names.service), names.model.empty() ? backend_id : std::move(names.model),
          std::move(names.dataset), MetricName::Acc, metrics::accuracy(predicted, truth)};
}

/// Emits a PC row followed by an MAE row.
inline std::vector<EvaluationRow> evaluate_regressor(const Registry& registry,
                                                     const std::string& backend_id,
                                                     const std::vector<ScoredInput>& dataset,
                                                     EvaluationLabels names = {}) {
  if (!registry.has_backend(backend_id)) fail(ErrorCode::UnknownBackend, backend_id);
  if (dataset.empty()) fail(ErrorCode::EmptyDataset, "regressor evaluation needs data");
  metrics::ScoreSeries series;
  for (const auto& item : dataset) {
    series.x.push_back(registry.score(backend_id, item.input).score);
    series.y.push_back(item.true_score);
  }
  const std::string model = names.model.empty() ? backend_id : names.model;
  return {
      {names.service, model, names.dataset, MetricName::PC, metrics::pearson_correlation(series)},
      {names.service, model, names.dataset, MetricName::MAE, metrics::mean_absolute_error(series)},
  };
}

/// Service | Model | Dataset | Performance, pipe-separated.
inline std::string render_evaluation(const EvaluationReport& report) {
  std::string out = "Service | Model | Dataset | Performance\n";
  for (const auto& r : report.rows) {
    out += r.service + " | " + r.model + " | " + r.dataset + " | " + format_metric(r) + "\n";
  }
  return out;
}

}  // namespace xcloud
