#pragma once

#include <stdexcept>
#include <string>

namespace ust {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or axis violation in a tensor primitive.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Caller broke an operation's precondition.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Bad or inconsistent configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Missing/unreadable/corrupt data on disk.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// Unknown id in an embedding or speaker table.
class LookupError : public Error {
 public:
  explicit LookupError(const std::string& msg) : Error(msg) {}
};

// Task and batch modality disagree.
class RoutingError : public Error {
 public:
  explicit RoutingError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf gradients, failed gradient audits, unalignable CTC targets.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace ust
