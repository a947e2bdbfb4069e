#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace mprobe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or lengths that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A ratio, correlation or drop whose denominator vanished.
class UndefinedError : public Error {
 public:
  using Error::Error;
};

// Generator produced non-finite output. `index` names the finite-difference
// column (or path step) that failed; empty means the base point.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, std::optional<std::size_t> index)
      : Error(what), index_(index) {}
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  std::optional<std::size_t> index_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Records that cannot be paired across conditions.
class PairingError : public Error {
 public:
  using Error::Error;
};

}  // namespace mprobe
