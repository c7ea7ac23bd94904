#pragma once

#include <stdexcept>
#include <string>

namespace mtaim {

// Base of every error raised by the library. The CLI maps kinds to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error("configuration error: " + field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data error: " + what) {}
};

// Degenerate inputs: single label, single subject, nonpositive baseline, ...
class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& what) : Error("degenerate input: " + what) {}
};

class ArityError : public Error {
 public:
  explicit ArityError(const std::string& what) : Error("arity error: " + what) {}
};

class ModeError : public Error {
 public:
  explicit ModeError(const std::string& what) : Error("mode error: " + what) {}
};

class AlignmentError : public Error {
 public:
  explicit AlignmentError(const std::string& what) : Error("alignment error: " + what) {}
};

class NotApplicableError : public Error {
 public:
  explicit NotApplicableError(const std::string& what) : Error("not applicable: " + what) {}
};

class LeakageError : public Error {
 public:
  explicit LeakageError(const std::string& what) : Error("leakage detected: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("i/o error: " + what) {}
};

class TrainingError : public Error {
 public:
  TrainingError(int epoch, const std::string& what)
      : Error("training failure at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace mtaim
