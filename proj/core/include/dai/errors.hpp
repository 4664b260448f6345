#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dai {

// Base of the toolkit error hierarchy. The three families below map onto
// CLI exit codes: UsageError -> 2, DataError -> 3, AnalysisError -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad invocation or configuration values (not file contents).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or mismatched input files, schemas, formats.
class DataError : public Error {
 public:
  using Error::Error;
};

// The analysis itself could not reach a confident answer.
class AnalysisError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

class UnsupportedFormatError : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedCaptureError : public DataError {
 public:
  TruncatedCaptureError(const std::string& msg, std::uint64_t byte_offset)
      : DataError(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::uint64_t offset;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class DomainError : public DataError {
 public:
  using DataError::DataError;
};

class VersionError : public DataError {
 public:
  using DataError::DataError;
};

class KeyLengthError : public DataError {
 public:
  using DataError::DataError;
};

class NoFlowsError : public AnalysisError {
 public:
  using AnalysisError::AnalysisError;
};

class EmptyInputError : public AnalysisError {
 public:
  using AnalysisError::AnalysisError;
};

class PtNotFoundError : public AnalysisError {
 public:
  using AnalysisError::AnalysisError;
};

class SeqNotFoundError : public AnalysisError {
 public:
  using AnalysisError::AnalysisError;
};

class InsufficientDataError : public AnalysisError {
 public:
  using AnalysisError::AnalysisError;
};

class KeyNotFoundError : public AnalysisError {
 public:
  using AnalysisError::AnalysisError;
};

class StaleFieldMapError : public AnalysisError {
 public:
  using AnalysisError::AnalysisError;
};

class AlignmentError : public AnalysisError {
 public:
  using AnalysisError::AnalysisError;
};

class DegenerateVarianceError : public AnalysisError {
 public:
  using AnalysisError::AnalysisError;
};

}  // namespace dai
