// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace psage {

enum class ErrorKind {
  invalid_input,
  incomplete_layer,
  malformed_record,
  shape,
  invalid_graph,
  degenerate_geometry,
  numeric_failure,
  contract,
  version_mismatch,
  corrupt_manifest,
  config,
  io,
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid input";
    case ErrorKind::incomplete_layer: return "incomplete layer";
    case ErrorKind::malformed_record: return "malformed record";
    case ErrorKind::shape: return "shape mismatch";
    case ErrorKind::invalid_graph: return "invalid graph";
    case ErrorKind::degenerate_geometry: return "degenerate geometry";
    case ErrorKind::numeric_failure: return "numeric failure";
    case ErrorKind::contract: return "contract violation";
    case ErrorKind::version_mismatch: return "version mismatch";
    case ErrorKind::corrupt_manifest: return "corrupt manifest";
    case ErrorKind::config: return "config error";
    case ErrorKind::io: return "i/o error";
  }
  return "error";
}

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it to an exit status without parsing messages.
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

}  // namespace psage
