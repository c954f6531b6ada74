#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace varilens {

// Error categories map 1:1 onto CLI exit codes.
enum class ErrorKind {
  usage = 1,      // bad flags, bad subcommand
  parse = 2,      // malformed input files
  analysis = 3,   // insufficient data, invalid model, domain violations
  transport = 4,  // endpoint failures, fixture misses
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& message) {
  return Error(ErrorKind::usage, message);
}

inline Error parse_error(const std::string& message) {
  return Error(ErrorKind::parse, message);
}

inline Error parse_error_at(std::size_t line, const std::string& message) {
  return Error(ErrorKind::parse, "line " + std::to_string(line) + ": " + message);
}

inline Error field_error_at(std::size_t line, const std::string& message) {
  return Error(ErrorKind::parse,
               "line " + std::to_string(line) + ": field error: " + message);
}

inline Error analysis_error(const std::string& message) {
  return Error(ErrorKind::analysis, message);
}

inline Error transport_error(const std::string& message) {
  return Error(ErrorKind::transport, message);
}

}  // namespace varilens
