#pragma once

#include <stdexcept>
#include <string>

namespace stela {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable/unwritable files, truncated streams.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// On-disk payload violates the expected format (bad length, bad token count).
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Inconsistent configuration or mismatched dimensions.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Runtime data breaks an invariant (duplicate voxel index, id out of range).
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// API misuse (backward without a cached forward, metric on empty matrix).
struct UsageError : Error {
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

}  // namespace stela
