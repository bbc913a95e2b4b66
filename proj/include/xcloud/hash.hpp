#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace xcloud {

using Byte = std::uint8_t;

// FNV-1a, 64-bit. Stable across platforms and releases; backends depend on it.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t stable_hash(std::span<const Byte> bytes) noexcept {
  std::uint64_t h = kFnvOffset;
  for (Byte b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

constexpr std::uint64_t stable_hash(std::string_view text) noexcept {
  std::uint64_t h = kFnvOffset;
  for (char c : text) {
    h ^= static_cast<Byte>(c);
    h *= kFnvPrime;
  }
  return h;
}

// splitmix64 finalizer, used to derive independent per-label noise from one hash.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Uniform fraction in [0, 1) from the top 53 bits.
constexpr double unit_fraction(std::uint64_t x) noexcept {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

}  // namespace xcloud
