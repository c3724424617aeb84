#pragma once

#include <stdexcept>
#include <string>

namespace pfs {

enum class ErrorKind {
  usage,
  config,
  dependency,
  schema,
  integrity,
  data,
  harmonization,
  join,
  range,
  domain,
  numeric,
  validation,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::config: return "config";
    case ErrorKind::dependency: return "dependency";
    case ErrorKind::schema: return "schema";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::data: return "data";
    case ErrorKind::harmonization: return "harmonization";
    case ErrorKind::join: return "join";
    case ErrorKind::range: return "range";
    case ErrorKind::domain: return "domain";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::validation: return "validation";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so the CLI can map it
/// onto a process exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// CLI exit codes: 0 success, 1 usage, 2 data, 3 numeric, 4 validation.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::config:
    case ErrorKind::dependency:
      return 1;
    case ErrorKind::numeric:
    case ErrorKind::domain:
      return 3;
    case ErrorKind::validation:
      return 4;
    default:
      return 2;
  }
}

}  // namespace pfs
