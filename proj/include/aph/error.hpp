#pragma once

#include <stdexcept>
#include <string>

namespace aph {

/// Broad failure classes; the CLI maps each to its own exit code.
enum class ErrorCategory { validation, training, numerical, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorCategory::validation, what) {}
};

/// A nondimensional temperature fell outside [0, 1].
class ScaleError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Array lengths or grids that were expected to agree do not.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A requested design or batch exceeds a configured size limit.
class SizeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorCategory::numerical, what) {}
};

/// The rotational fixed point did not settle within the iteration budget.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, double last_residual)
      : NumericalError(what), last_residual_(last_residual) {}
  double last_residual() const noexcept { return last_residual_; }

 private:
  double last_residual_;
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what)
      : Error(ErrorCategory::training, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

/// Malformed text input; line is 1-based, 0 when unknown.
class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : IoError(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace aph
