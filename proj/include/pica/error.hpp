#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pica {

// Broad failure classes. The CLI maps these onto exit codes and the console
// service onto HTTP status codes.
enum class ErrorKind {
  InvalidArgument,  // caller supplied bad data
  NotFound,         // unknown student, dyad, quiz
  Conflict,         // lifecycle/phase violation or stale revision
  Precondition,     // required data missing (e.g. a-quiz not synced)
  Unauthorized,     // LMS rejected credentials
  Transport,        // network failure after retries
  Lms,              // LMS rejected a request
  Io,               // filesystem
  Parse,            // malformed file contents
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::NotFound: return "not found";
    case ErrorKind::Conflict: return "conflict";
    case ErrorKind::Precondition: return "precondition failed";
    case ErrorKind::Unauthorized: return "unauthorized";
    case ErrorKind::Transport: return "transport error";
    case ErrorKind::Lms: return "lms error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::Parse: return "parse error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string payload = {})
      : std::runtime_error(message), kind_(kind), payload_(std::move(payload)) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Raw upstream body, when the failure came from the LMS.
  const std::string& payload() const noexcept { return payload_; }

 private:
  ErrorKind kind_;
  std::string payload_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace pica
