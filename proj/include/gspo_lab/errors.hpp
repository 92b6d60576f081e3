#pragma once

#include <stdexcept>
#include <string>

namespace gspo_lab {

enum class ErrorKind {
  malformed_record,
  invalid_config,
  empty_side,
  insufficient_legit,
  illegal_sequence,
  shape_mismatch,
  degenerate_data,
  io,
};

const char* to_string(ErrorKind kind) noexcept;

// Single exception type for the library; the kind drives C API status codes
// and CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

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

}  // namespace gspo_lab
