#pragma once

#include <stdexcept>
#include <string>

namespace flowmine {

// Error categories double as CLI exit codes.
enum class ErrorKind : int {
  usage = 1,     // bad arguments or configuration
  data = 2,      // malformed or inconsistent input files
  internal = 3,  // violated invariant (NaN gradient, broken checkpoint math, ...)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& what) {
  return Error(ErrorKind::usage, what);
}

inline Error data_error(const std::string& what) {
  return Error(ErrorKind::data, what);
}

inline Error internal_error(const std::string& what) {
  return Error(ErrorKind::internal, what);
}

}  // namespace flowmine
