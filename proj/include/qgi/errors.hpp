#pragma once

#include <stdexcept>
#include <string>

namespace qgi {

/// Base of every error raised by the library. `kind()` is a short stable tag
/// used in machine-readable error records.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Invalid configuration or precondition on user-supplied parameters.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

/// Numerical failure: singular evaluation, divergence, lost positivity, ...
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, std::string kind = "numerical")
      : Error(std::move(kind), what) {}
};

}  // namespace qgi
