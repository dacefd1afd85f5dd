#pragma once

#include <stdexcept>
#include <string>

namespace blocknas {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input: config strings, macro strings, manifests.
class ParseError : public Error {
 public:
  using Error::Error;
};

// A value that parsed but violates a type invariant.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by the engine or the optimizer.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Missing, truncated or malformed dataset and checkpoint files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Run-directory state that cannot be resumed or reused.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace blocknas
