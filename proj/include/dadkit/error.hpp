#pragma once

#include <stdexcept>
#include <string>

namespace dadkit {

enum class ErrorKind {
  invalid_input,
  invalid_parameter,
  degenerate_mask,
  degenerate_transfer,
  degenerate_input,
  insufficient_data,
  placement,
  io,
  internal,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid input";
    case ErrorKind::invalid_parameter: return "invalid parameter";
    case ErrorKind::degenerate_mask: return "degenerate mask";
    case ErrorKind::degenerate_transfer: return "degenerate transfer";
    case ErrorKind::degenerate_input: return "degenerate input";
    case ErrorKind::insufficient_data: return "insufficient data";
    case ErrorKind::placement: return "placement failure";
    case ErrorKind::io: return "i/o failure";
    case ErrorKind::internal: return "internal error";
  }
  return "unknown error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  // The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

  // Errors a caller can fix by changing inputs or configuration.
  bool is_validation() const noexcept {
    return kind_ == ErrorKind::invalid_input || kind_ == ErrorKind::invalid_parameter;
  }

 private:
  ErrorKind kind_;
  std::string message_;
};

#define DADKIT_CHECK(cond, kind, msg)                      \
  do {                                                     \
    if (!(cond)) throw ::dadkit::Error((kind), (msg));     \
  } while (0)

}  // namespace dadkit
