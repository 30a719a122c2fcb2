#pragma once

#include <stdexcept>
#include <string>

namespace vstudent {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed file header, manifest or payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Payload shorter than its header promises.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Two parts of an artifact disagree with each other.
class ConsistencyError : public FormatError {
 public:
  using FormatError::FormatError;
};

// A derived artifact no longer matches the artifact it was computed from.
class StalenessError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

// Bad command-line or configuration input.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace vstudent
