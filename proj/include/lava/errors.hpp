// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace lava {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
  using Error::Error;
};

/// Non-finite values or undefined quantities (zero-norm cosine, ...).
class NumericError : public Error {
public:
  using Error::Error;
};

/// Caller broke a shape or pairing contract.
class ContractError : public Error {
public:
  using Error::Error;
};

// Data-side failures. All of these map to CLI exit code 3.
class DataError : public Error {
public:
  using Error::Error;
};

class FormatError : public DataError {
public:
  using DataError::DataError;
};

class IngestionError : public DataError {
public:
  using DataError::DataError;
};

class SplitError : public DataError {
public:
  using DataError::DataError;
};

class InputError : public DataError {
public:
  using DataError::DataError;
};

class EvaluationError : public Error {
public:
  using Error::Error;
};

}  // namespace lava
