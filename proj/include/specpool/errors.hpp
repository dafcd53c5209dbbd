#pragma once

#include <stdexcept>
#include <string>

namespace specpool {

// Every failure carries a stable machine-readable code ("ParseError",
// "DimensionMismatch", ...) in addition to the human-readable message, so the
// CLI can emit structured {stage, code, message} errors.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

private:
  std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& message) {
  throw Error(std::move(code), message);
}

}  // namespace specpool
