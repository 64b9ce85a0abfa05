#pragma once

#include <stdexcept>
#include <string>

namespace slap {

/// Error categories. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
  kInternal = 1,
  kConfig = 2,
  kSchema = 3,
  kIntegrity = 4,
  kNumeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

/// Bad configuration or parameters (keep fraction, K, FLOPs inputs, ...).
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::kConfig, w) {}
};

/// Input whose shape or content violates the declared schema.
struct SchemaError : Error {
  explicit SchemaError(const std::string& w) : Error(ErrorKind::kSchema, w) {}
};

/// Duplicate ids, quotas exceeding populations and similar consistency faults.
struct IntegrityError : Error {
  explicit IntegrityError(const std::string& w)
      : Error(ErrorKind::kIntegrity, w) {}
};

/// Non-finite values and uninitialized numeric state.
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::kNumeric, w) {}
};

struct InternalError : Error {
  explicit InternalError(const std::string& w)
      : Error(ErrorKind::kInternal, w) {}
};

}  // namespace slap
