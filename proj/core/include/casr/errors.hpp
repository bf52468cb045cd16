// Error types shared by every casr module.
#pragma once

#include <stdexcept>
#include <string>

namespace casr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN / non-positive scale / other numeric domain violations.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters, unknown enum names, missing required inputs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse such as calling backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// CTC label that cannot be emitted in the available number of frames.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// Duration lists that do not cover the frame sequence.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

// A function under gradient check returned different values on repeated calls.
class DeterminismError : public Error {
 public:
  using Error::Error;
};

// Bad magic, unsupported version, truncated payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace casr
