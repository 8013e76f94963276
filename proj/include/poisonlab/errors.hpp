#pragma once

#include <stdexcept>
#include <string>

namespace poisonlab {

// Bad user input: config files, data files, infeasible plans. CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken caller precondition. CLI exit code 2.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Non-finite values in the numerical stack. Training aborts. CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace poisonlab
