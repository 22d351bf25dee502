#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bayesformer {

// Violated precondition of a public operation (bad probability, id out of
// range, non-scalar loss, ...). The CLI maps this to exit code 1.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Malformed input file. `line` is 1-based; 0 when not line oriented.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace bayesformer
