#pragma once

#include <stdexcept>
#include <string>

namespace terrasafe {

// Broad failure classes. The CLI maps each one to its own exit code.
enum class ErrorKind {
  invalid_argument,
  io,
  format,
  data,
  config,
  retry_exhausted,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace terrasafe
