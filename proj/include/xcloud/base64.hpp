#pragma once

#include <sodium.h>

#include <cstddef>
#include <string>
#include <string_view>

#include "xcloud/backend.hpp"
#include "xcloud/error.hpp"

namespace xcloud {

/// Standard (RFC 4648, padded) base-64 via libsodium.
inline std::string base64_encode(ByteView bytes) {
  if (sodium_init() < 0) fail(ErrorCode::StorageFailure, "libsodium initialisation failed");
  const std::size_t len = sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  std::string out(len, '\0');
  sodium_bin2base64(out.data(), len, bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  out.resize(len - 1);  // drop the terminating NUL
  return out;
}

/// Strict decode; line breaks are tolerated. Throws BadRequest when the text
/// is malformed, decodes to nothing, or decodes to more than `max_bytes`.
inline Bytes base64_decode(std::string_view text, std::size_t max_bytes) {
  if (sodium_init() < 0) fail(ErrorCode::StorageFailure, "libsodium initialisation failed");
  if (text.empty()) fail(ErrorCode::BadRequest, "empty imgraw payload");
  std::size_t payload = 0;
  for (char c : text) payload += (c != '\r' && c != '\n') ? 1 : 0;
  // A full quad decodes to 3 bytes, less up to 2 for padding.
  if (payload / 4 * 3 > max_bytes + 2) {
    fail(ErrorCode::BadRequest, "imgraw exceeds " + std::to_string(max_bytes) + " bytes");
  }
  Bytes out(text.size() / 4 * 3 + 3);
  std::size_t written = 0;
  const char* end = nullptr;
  const int rc = sodium_base642bin(out.data(), out.size(), text.data(), text.size(), "\r\n", &written,
                                   &end, sodium_base64_VARIANT_ORIGINAL);
  if (rc != 0 || end != text.data() + text.size()) fail(ErrorCode::BadRequest, "malformed base-64 in imgraw");
  if (written == 0) fail(ErrorCode::BadRequest, "empty imgraw payload");
  if (written > max_bytes) fail(ErrorCode::BadRequest, "imgraw exceeds " + std::to_string(max_bytes) + " bytes");
  out.resize(written);
  return out;
}

}  // namespace xcloud
