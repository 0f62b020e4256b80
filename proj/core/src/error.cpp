#include "terrasafe/error.hpp"

namespace terrasafe {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::data: return "data";
    case ErrorKind::config: return "config";
    case ErrorKind::retry_exhausted: return "retry_exhausted";
  }
  return "unknown";
}

}  // namespace terrasafe
