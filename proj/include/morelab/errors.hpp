#pragma once

#include <stdexcept>
#include <string>

namespace morelab {

// Shape contracts violated (matmul inner dims, row counts, ...).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Degenerate or out-of-image bounding boxes.
class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SpanError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class EmptyPoolError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class EmptySceneError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite function values or gradients.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training loss became non-finite; parameters hold the last good state.
class DivergenceError : public EvaluationError {
 public:
  using EvaluationError::EvaluationError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace morelab
