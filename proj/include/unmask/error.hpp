#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace unmask {

enum class ErrorKind {
  argument,
  format,
  truncation,
  ordering,
  alignment,
  data,
  stream_too_short,
  undefined_auc,
  capability,
  configuration,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument: return "argument";
    case ErrorKind::format: return "format";
    case ErrorKind::truncation: return "truncation";
    case ErrorKind::ordering: return "ordering";
    case ErrorKind::alignment: return "alignment";
    case ErrorKind::data: return "data";
    case ErrorKind::stream_too_short: return "stream_too_short";
    case ErrorKind::undefined_auc: return "undefined_auc";
    case ErrorKind::capability: return "capability";
    case ErrorKind::configuration: return "configuration";
  }
  return "unknown";
}

// Every failure raised by the library carries a kind so that the command-line
// front end can map it onto an exit code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Exit code contract of the CLI: 2 for usage problems, 3 for bad inputs.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument:
    case ErrorKind::capability:
    case ErrorKind::configuration:
      return 2;
    default:
      return 3;
  }
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace unmask
