#pragma once

#include <stdexcept>
#include <string>

namespace actionset {

/// Caller broke a precondition (dimension mismatch, index out of range, ...).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every action received zero prior mass, so no posterior can be formed.
class DegeneratePosterior : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An objective term evaluated to a non-finite value.
class ObjectiveError : public std::runtime_error {
 public:
  ObjectiveError(const std::string& term, const std::string& detail)
      : std::runtime_error("non-finite objective term '" + term + "': " + detail), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// Optimization produced non-finite gradients or losses.
class TrainingDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// k-means could not produce K non-empty clusters.
class InitializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration value (generator weights, train config, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed record in a dataset file.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& detail)
      : std::runtime_error("line " + std::to_string(line) + ": " + detail), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Record is well-formed but its dimensions disagree with the rest of the file.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::size_t line, const std::string& detail)
      : std::runtime_error("line " + std::to_string(line) + ": " + detail), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Checkpoint is missing, truncated, corrupt, or incompatible.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model parameters are unusable (non-finite) for inference.
class ModelStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace actionset
