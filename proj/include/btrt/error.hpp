#pragma once

#include <stdexcept>
#include <string>

namespace btrt {

// Base for every error the library raises. The CLI maps UsageError and
// IoError to exit code 1 and NumericalError to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments, shape mismatches, invalid configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Factorization failures and other numerical breakdowns inside the sampler.
class NumericalError : public Error {
 public:
  using Error::Error;
};

enum class IoErrorCode {
  kOpenFailed,
  kBadMagic,
  kVersionMismatch,
  kTruncatedPayload,
  kParse,
  kDimensionMismatch,
  kWriteFailed,
};

inline const char* to_string(IoErrorCode code) {
  switch (code) {
    case IoErrorCode::kOpenFailed: return "open failed";
    case IoErrorCode::kBadMagic: return "bad magic";
    case IoErrorCode::kVersionMismatch: return "version mismatch";
    case IoErrorCode::kTruncatedPayload: return "truncated payload";
    case IoErrorCode::kParse: return "parse error";
    case IoErrorCode::kDimensionMismatch: return "dimension mismatch";
    case IoErrorCode::kWriteFailed: return "write failed";
  }
  return "unknown";
}

class IoError : public Error {
 public:
  IoError(IoErrorCode code, const std::string& what)
      : Error(std::string(to_string(code)) + ": " + what), code_(code) {}

  IoErrorCode code() const noexcept { return code_; }

 private:
  IoErrorCode code_;
};

}  // namespace btrt
