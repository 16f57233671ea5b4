#pragma once

#include <stdexcept>
#include <string>

namespace ganorcon {

// Failure categories surfaced by the library. The CLI maps these to
// machine-readable error JSON and a nonzero exit code.
enum class ErrorKind {
  io,          // unreadable/unwritable files
  config,      // invalid or inconsistent configuration
  pairing,     // image/mask pairing failures in dataset layouts
  schema,      // label values outside the schema, bad schema definitions
  remap,       // source/target schema mismatch in label remapping
  checkpoint,  // weight/spec mismatch, corrupt containers
  shape,       // tensor shape mismatch
  contract,    // violated operation precondition (e.g. unnormalized input)
  metric,      // incompatible masks passed to a metric
  protocol,    // evaluation protocol violations (e.g. < 5 test items)
  divergence,  // non-finite loss during training
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  const char* kind_name() const { return error_kind_name(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace ganorcon
