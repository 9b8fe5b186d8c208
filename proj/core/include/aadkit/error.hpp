#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace aadkit {

// Root of the library's exception hierarchy. Every error thrown by aadkit
// derives from this so callers can catch the whole family in one place.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument values (frequencies, counts, shapes).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Signal or sequence too short for the requested operation.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Pearson correlation of a constant window.
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

// Input data that cannot support the computation (e.g. every CV fold degenerate).
class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Network training diverged. Carries the loss trace up to the failure.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::vector<double> trace) : Error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

// Malformed on-disk data. `offset` is the byte offset of the failing field
// for binary files, or -1 when not applicable.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, long long offset = -1)
      : Error(offset >= 0 ? what + " (at byte offset " + std::to_string(offset) + ")" : what),
        offset_(offset) {}
  long long offset() const noexcept { return offset_; }

 private:
  long long offset_;
};

}  // namespace aadkit
