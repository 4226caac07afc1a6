#pragma once

#include <cstdint>
#include <string>

namespace calib {

// Plain SHA-256, lowercase hex digest.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& bytes);

// Content hash in the style of a version-control blob: the digest covers
// "blob <size>\0" followed by the bytes, so equal content always hashes
// equal regardless of where the file lives.
std::string blob_hash_hex(const std::string& bytes);

// Blob hash of a file's bytes. Throws std::runtime_error when unreadable.
std::string file_blob_hash_hex(const std::string& path);

}  // namespace calib
