#pragma once

#include <stdexcept>
#include <string>

namespace deephalo {

// Root of every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible matrix shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A reduction over a set with no real (unmasked) members.
class DegenerateSetError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Model configuration or model/data incompatibility.
class ModelError : public Error {
 public:
  using Error::Error;
};

// Divergence or invalid optimizer state.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Refusals from the context-effect extraction (cost caps, bad subsets).
class AnalysisError : public Error {
 public:
  using Error::Error;
};

}  // namespace deephalo
