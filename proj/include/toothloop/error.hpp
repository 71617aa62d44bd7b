#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace toothloop {

/// Machine-readable failure categories. The service maps these onto HTTP
/// status codes and the CLI onto exit codes.
enum class ErrorCode {
  invalid_argument,   // precondition violated by the caller
  not_found,          // referenced entity does not exist
  conflict,           // state does not allow the operation (e.g. running round)
  degenerate,         // numerically degenerate input (empty mask, S_b = 0, ...)
  parse_error,        // malformed document
  protocol_error,     // well-formed but invalid backend payload
  transport_error,    // backend unreachable / timed out
  io_error,           // filesystem failure
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace toothloop
