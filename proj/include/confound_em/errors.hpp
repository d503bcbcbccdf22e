#pragma once

#include <stdexcept>
#include <string>

namespace confound_em {

/// Malformed or inconsistent configuration (flags, key=value files, specs).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input file does not match the declared schema (missing columns, empty file).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Data values violate a domain invariant (non-binary treatment, varying z, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure inside an estimation routine.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RankDeficiencyError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class IdentificationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class IllConditionedError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Bootstrap or replication harness lost too many replicates.
class UnstableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace confound_em
