#pragma once

// Independent reference computations for tests. Nothing here may call into
// the code under test.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

/// Textbook one-pass form in extended precision.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    long double a = x[i], b = y[i];
    sx += a;
    sy += b;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  long double num = n * sxy - sx * sy;
  long double den = std::sqrt(n * sxx - sx * sx) * std::sqrt(n * syy - sy * sy);
  return static_cast<double>(num / den);
}

inline double mae(const std::vector<double>& x, const std::vector<double>& y) {
  long double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::fabs(static_cast<long double>(x[i]) - y[i]);
  return static_cast<double>(s / x.size());
}

template <typename T>
double accuracy(const std::vector<T>& p, const std::vector<T>& t) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < p.size(); ++i) hits += p[i] == t[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(p.size());
}

/// Nearest rank for p = permille / 1000 using integer arithmetic only.
template <typename T>
T percentile_permille(std::vector<T> s, int permille) {
  std::sort(s.begin(), s.end());
  std::size_t rank = (static_cast<std::size_t>(permille) * s.size() + 999) / 1000;
  if (rank == 0) rank = 1;
  return s[rank - 1];
}

inline std::size_t stub_peak_index(const std::vector<std::uint8_t>& bytes, std::size_t labels) {
  std::uint64_t sum = 0;
  for (auto b : bytes) sum += b;
  return static_cast<std::size_t>(sum % labels);
}

/// Cosine similarity from raw byte histograms, no pre-normalisation.
inline double histogram_cosine(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::array<double, 256> ha{}, hb{};
  for (auto v : a) ha[v] += 1;
  for (auto v : b) hb[v] += 1;
  double dot = 0, na = 0, nb = 0;
  for (int i = 0; i < 256; ++i) {
    dot += ha[i] * hb[i];
    na += ha[i] * ha[i];
    nb += hb[i] * hb[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Exhaustive scan: (id, image) pairs, query, k -> ids best first. Ranks in
/// exact integer arithmetic: cos_i > cos_j iff dot_i^2 * |h_j|^2 > dot_j^2 * |h_i|^2
/// (all dots are non-negative), so mathematical ties are exact ties.
inline std::vector<std::string> face_scan(
    const std::vector<std::pair<std::string, std::vector<std::uint8_t>>>& enrolled,
    const std::vector<std::uint8_t>& query, std::size_t k) {
  struct Scored {
    unsigned __int128 dot, norm;
    std::string id;
  };
  std::array<std::uint64_t, 256> hq{};
  for (auto v : query) ++hq[v];
  std::vector<Scored> scored;
  for (const auto& [id, img] : enrolled) {
    std::array<std::uint64_t, 256> h{};
    for (auto v : img) ++h[v];
    unsigned __int128 dot = 0, norm = 0;
    for (int i = 0; i < 256; ++i) {
      dot += hq[i] * h[i];
      norm += h[i] * h[i];
    }
    scored.push_back({dot, norm, id});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    const auto lhs = a.dot * a.dot * b.norm, rhs = b.dot * b.dot * a.norm;
    if (lhs != rhs) return lhs > rhs;
    return a.id < b.id;
  });
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) ids.push_back(scored[i].id);
  return ids;
}

}  // namespace oracle
