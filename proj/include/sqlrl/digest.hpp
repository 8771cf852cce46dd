#pragma once

#include <string>
#include <string_view>

namespace sqlrl {

// Hex-encoded SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

// Digest of a file's full contents. Throws std::runtime_error if unreadable.
std::string sha256_file(const std::string& path);

// First 16 hex chars of sha256_hex, for log-friendly keys.
std::string short_digest(std::string_view bytes);

}  // namespace sqlrl
