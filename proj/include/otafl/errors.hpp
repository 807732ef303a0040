#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace otafl {

/// Input outside an operation's mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& msg, std::vector<std::string> keys = {})
      : std::invalid_argument(msg), keys_(std::move(keys)) {}
  const std::vector<std::string>& keys() const { return keys_; }

 private:
  std::vector<std::string> keys_;
};

/// Optimization problem or round without a feasible point.
class InfeasibleError : public std::runtime_error {
 public:
  explicit InfeasibleError(const std::string& msg, std::vector<std::string> binding = {})
      : std::runtime_error(msg), binding_(std::move(binding)) {}
  const std::vector<std::string>& binding() const { return binding_; }

 private:
  std::vector<std::string> binding_;
};

/// Non-finite value produced during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace otafl
