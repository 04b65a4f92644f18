#pragma once

#include <stdexcept>
#include <string>

namespace vmloc {

// Violated precondition of a library call (programming error on the caller side).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Operand shapes that cannot be combined.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of an operation (log of a non-positive entry, ...).
class DomainError : public std::domain_error {
 public:
  DomainError(const std::string& what, std::size_t index)
      : std::domain_error(what + " at index " + std::to_string(index)), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The regressor emitted a quaternion too close to zero to normalize.
class DegenerateOutputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define VMLOC_EXPECTS(cond, msg)                   \
  do {                                             \
    if (!(cond)) throw ::vmloc::ContractViolation(msg); \
  } while (0)

}  // namespace vmloc
