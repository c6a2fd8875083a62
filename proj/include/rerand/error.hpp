#pragma once

#include <stdexcept>
#include <string>

namespace rerand {

// Numeric values double as CLI exit codes; keep them stable.
enum class ErrorKind : int {
  Usage = 2,
  Parse = 3,
  Dimension = 4,
  SingularCovariance = 5,
  MaxDrawsExceeded = 6,
  Io = 7,
  Domain = 8,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::SingularCovariance: return "singular-covariance";
    case ErrorKind::MaxDrawsExceeded: return "max-draws-exceeded";
    case ErrorKind::Io: return "io";
    case ErrorKind::Domain: return "domain";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class SingularCovariance : public Error {
 public:
  explicit SingularCovariance(const std::string& what, std::string column = {})
      : Error(ErrorKind::SingularCovariance, what), column_(std::move(column)) {}

  /// Offending covariate, when one can be singled out.
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

class MaxDrawsExceeded : public Error {
 public:
  MaxDrawsExceeded(const std::string& what, unsigned long long draws)
      : Error(ErrorKind::MaxDrawsExceeded, what), draws_(draws) {}

  unsigned long long draws() const noexcept { return draws_; }

 private:
  unsigned long long draws_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace rerand
