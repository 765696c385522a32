#pragma once

#include <stdexcept>
#include <string>

namespace upam {

/// Broad failure classes; the CLI maps each onto an exit status.
enum class ErrorCategory { usage, data, invariant, io };

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::data: return "data";
    case ErrorCategory::invariant: return "invariant";
    case ErrorCategory::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

/// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

/// Well-formed input that yields nothing (e.g. a clip shorter than one window).
class EmptyResultError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorCategory::invariant, what) {}
};

class LeakageError : public Error {
 public:
  explicit LeakageError(const std::string& what) : Error(ErrorCategory::invariant, what) {}
};

class StratificationError : public DataError {
 public:
  using DataError::DataError;
};

/// AP/recall requested on a label set with no positives.
class DegenerateMetricError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

class CheckpointError : public Error {
 public:
  enum class Kind { version, corrupt, shape };
  CheckpointError(Kind kind, const std::string& what)
      : Error(kind == Kind::shape ? ErrorCategory::invariant : ErrorCategory::data, what),
        kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorCategory::usage, what) {}
};

}  // namespace upam
