#pragma once

#include <stdexcept>
#include <string>

namespace pcfg {

// Shapes or indices that do not agree with each other.
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Input too small for the requested computation (e.g. single-token sentence).
class DegenerateInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// No parse exists for the sentence under the grammar.
class NoParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data: unreadable files, bad numbers, unbalanced brackets.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid settings or mode combinations.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A statistical procedure is undefined for the given data.
class DegenerateTestError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// NaN or non-finite values during training.
class TrainingFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pcfg
