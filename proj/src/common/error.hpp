#pragma once

#include <stdexcept>
#include <string>

namespace cvtnet {

enum class ErrorCode {
  Format = 1,
  Data,
  Config,
  Shape,
  Io,
  NotFound,
  Duplicate,
  Training,
  Metric,
  InvalidArgument,
  Internal,
  CheckFailed,
};

const char* error_code_name(ErrorCode code) noexcept;

/// Every failure in the library surfaces as an Error carrying a category.
/// The C API maps the category onto its status codes one-to-one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace cvtnet
