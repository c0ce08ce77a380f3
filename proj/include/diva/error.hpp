#pragma once

#include <stdexcept>
#include <string>

namespace diva {

// Shape or hyperparameter combination that can never work.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-supplied data: OOV token, wrong image size, empty batch.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A math op was asked to leave its domain (log of a non-positive value, NaN gradient).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an API precondition (non-scalar backward root, missing tape).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed or mismatched file on disk.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace diva
