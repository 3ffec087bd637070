#include "common/error.hpp"

namespace cvtnet {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Format: return "format error";
    case ErrorCode::Data: return "data error";
    case ErrorCode::Config: return "config error";
    case ErrorCode::Shape: return "shape error";
    case ErrorCode::Io: return "io error";
    case ErrorCode::NotFound: return "not found";
    case ErrorCode::Duplicate: return "duplicate";
    case ErrorCode::Training: return "training error";
    case ErrorCode::Metric: return "metric error";
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::Internal: return "internal error";
    case ErrorCode::CheckFailed: return "check failed";
  }
  return "unknown error";
}

}  // namespace cvtnet
