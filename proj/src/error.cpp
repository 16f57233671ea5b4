#include "ganorcon/error.hpp"

namespace ganorcon {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
    case ErrorKind::pairing: return "pairing";
    case ErrorKind::schema: return "schema";
    case ErrorKind::remap: return "remap";
    case ErrorKind::checkpoint: return "checkpoint";
    case ErrorKind::shape: return "shape";
    case ErrorKind::contract: return "contract";
    case ErrorKind::metric: return "metric";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::divergence: return "divergence";
  }
  return "unknown";
}

}  // namespace ganorcon
