#pragma once

#include <stdexcept>
#include <string>

namespace histokt {

/// Bad command-line usage or bad arguments to an operation (CLI exit 1).
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem / OS level failure (CLI exit 2).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid data: broken invariants, corrupt files, incompatible shapes
/// (CLI exit 3).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace histokt
