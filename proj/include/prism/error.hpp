#pragma once

#include <stdexcept>
#include <string>

namespace prism {

enum class ErrorKind {
  invalid_argument,
  degenerate_input,
  numeric_failure,
  io,
  format,
  corruption,
  unsupported_version,
  incompatible,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::degenerate_input: return "degenerate-input";
    case ErrorKind::numeric_failure: return "numeric-failure";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::corruption: return "corruption";
    case ErrorKind::unsupported_version: return "unsupported-version";
    case ErrorKind::incompatible: return "incompatible";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace prism
