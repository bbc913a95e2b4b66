#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xcloud/error.hpp"

namespace xcloud::metrics {

/// Paired predicted (x) and groundtruth (y) scores.
struct ScoreSeries {
  std::vector<double> x;
  std::vector<double> y;

  std::size_t size() const noexcept { return x.size(); }
};

namespace detail {

inline void check_paired(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    fail(ErrorCode::LengthMismatch, "series lengths " + std::to_string(x.size()) + " and " +
                                        std::to_string(y.size()) + " differ");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      fail(ErrorCode::InvalidArgument, "non-finite value at index " + std::to_string(i));
    }
  }
}

inline double mean(std::span<const double> v) {
  double sum = 0.0;
  for (double e : v) sum += e;
  return sum / static_cast<double>(v.size());
}

}  // namespace detail

/// Pearson correlation, computed in two passes (means, then centered moments).
inline double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  detail::check_paired(x, y);
  if (x.size() < 2) fail(ErrorCode::TooFewSamples, "pearson correlation needs n >= 2");

  const double mx = detail::mean(x);
  const double my = detail::mean(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    fail(ErrorCode::DegenerateVariance, "zero variance in a correlated series");
  }
  const double pc = sxy / (std::sqrt(sxx) * std::sqrt(syy));
  return std::clamp(pc, -1.0, 1.0);
}

inline double pearson_correlation(const ScoreSeries& s) { return pearson_correlation(s.x, s.y); }

inline double mean_absolute_error(std::span<const double> x, std::span<const double> y) {
  detail::check_paired(x, y);
  if (x.empty()) fail(ErrorCode::EmptyInput, "mean absolute error of an empty series");
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += std::abs(x[i] - y[i]);
  return sum / static_cast<double>(x.size());
}

inline double mean_absolute_error(const ScoreSeries& s) { return mean_absolute_error(s.x, s.y); }

template <typename Label>
double accuracy(std::span<const Label> predictions, std::span<const Label> truths) {
  if (predictions.size() != truths.size()) {
    fail(ErrorCode::LengthMismatch, "predictions and truths differ in length");
  }
  if (predictions.empty()) fail(ErrorCode::EmptyInput, "accuracy of an empty list");
  std::size_t matches = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == truths[i]) ++matches;
  }
  return static_cast<double>(matches) / static_cast<double>(predictions.size());
}

template <typename Label>
double accuracy(const std::vector<Label>& predictions, const std::vector<Label>& truths) {
  return accuracy(std::span<const Label>(predictions), std::span<const Label>(truths));
}

/// 1-indexed nearest rank ceil(p*n), tolerant of p*n landing a rounding error
/// above an integer (0.07 * 100 == 7.000000000000001).
inline std::size_t nearest_rank(double p, std::size_t n) {
  const double r = p * static_cast<double>(n);
  const double nearest = std::round(r);
  double rank = std::abs(r - nearest) <= 1e-9 * std::max(1.0, r) ? nearest : std::ceil(r);
  rank = std::clamp(rank, 1.0, static_cast<double>(n));
  return static_cast<std::size_t>(rank);
}

/// Nearest-rank percentile; always returns one of the samples.
template <typename T>
T percentile_nearest_rank(std::span<const T> samples, double p) {
  if (samples.empty()) fail(ErrorCode::EmptyInput, "percentile of no samples");
  if (!(p > 0.0 && p <= 1.0)) fail(ErrorCode::InvalidPercentile, "p must lie in (0, 1]");
  std::vector<T> sorted(samples.begin(), samples.end());
  const std::size_t rank = nearest_rank(p, sorted.size());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   sorted.end());
  return sorted[rank - 1];
}

template <typename T>
T percentile_nearest_rank(const std::vector<T>& samples, double p) {
  return percentile_nearest_rank(std::span<const T>(samples), p);
}

/// One row of a stress report. Latencies are milliseconds.
struct LatencySummary {
  std::string api;
  double avg_latency = 0.0;
  double p99 = 0.0;
  std::uint64_t error_count = 0;
  std::uint64_t sample_count = 0;

  bool operator==(const LatencySummary&) const = default;
};

inline LatencySummary summarize_latencies(std::string api, std::span<const double> samples_ms,
                                          std::uint64_t errors) {
  if (samples_ms.empty()) fail(ErrorCode::EmptyInput, "no latency samples for " + api);
  LatencySummary s;
  s.api = std::move(api);
  s.avg_latency = detail::mean(samples_ms);
  s.p99 = percentile_nearest_rank(samples_ms, 0.99);
  s.error_count = errors;
  s.sample_count = samples_ms.size();
  return s;
}

inline LatencySummary summarize_latencies(std::string api, const std::vector<double>& samples_ms,
                                          std::uint64_t errors) {
  return summarize_latencies(std::move(api), std::span<const double>(samples_ms), errors);
}

/// Half-up rounding to an integer, used for millisecond report columns.
inline std::int64_t round_half_up(double v) { return static_cast<std::int64_t>(std::floor(v + 0.5)); }

}  // namespace xcloud::metrics
