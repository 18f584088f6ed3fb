#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mv3d {

enum class ErrorKind {
  io,
  format,
  config,
  degenerate,
  empty_roi,
  contract,
  shape,
  divergence,
  placement,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::config: return "config";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::empty_roi: return "empty_roi";
    case ErrorKind::contract: return "contract";
    case ErrorKind::shape: return "shape";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::placement: return "placement";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace mv3d
