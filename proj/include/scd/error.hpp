#pragma once

#include <stdexcept>
#include <string>

namespace scd {

/// Raised for malformed input, invariant violations and unusable checkpoints.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input row or file failed validation; `column` names the offending column when known.
class ValidationError : public Error {
 public:
  ValidationError(std::string column, const std::string& message)
      : Error(message), column_(std::move(column)) {}

  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(message);
}

}  // namespace scd
