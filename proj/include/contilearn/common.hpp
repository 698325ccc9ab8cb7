#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace contilearn {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy. The C API maps these onto its exit/error codes:
// ConfigError -> 2, TrainingError/NumericError -> 3, IoError family -> 4.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public ConfigError {
 public:
  explicit DimensionError(const std::string& msg) : ConfigError(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class UsageError : public std::logic_error {
 public:
  explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Carries the epoch index where a run diverged.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& msg, int task_id, int epoch)
      : std::runtime_error(msg), task_id(task_id), epoch(epoch) {}
  int task_id = -1;
  int epoch = -1;
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class CorruptFileError : public IoError {
 public:
  explicit CorruptFileError(const std::string& msg) : IoError(msg) {}
};

class VersionMismatchError : public IoError {
 public:
  explicit VersionMismatchError(const std::string& msg) : IoError(msg) {}
};

inline uint64_t fnv1a64(const void* bytes, size_t len, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 1469598103934665603ull) {
  return fnv1a64(s.data(), s.size(), h);
}

std::string to_hex(uint64_t v);

}  // namespace contilearn
