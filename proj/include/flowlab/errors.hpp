#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace flowlab {

// All library failures carry a short machine-parsable code ("E_CONFIG",
// "E_SHAPE", ...) plus a human-readable message. The CLI prints
// "error: <code>: <message>" and exits nonzero.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool cond, const std::string& code, const std::string& message) {
  if (!cond) fail(code, message);
}

}  // namespace flowlab
