#pragma once

#include <stdexcept>
#include <string>

namespace age {

// Shape or dimension mismatch between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside an operation's mathematical domain (log of 0, n <= k, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed file, config or other user-provided input.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Degenerate geometry: antipodal slerp endpoints, zero-norm rows.
class GeometryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Training produced a non-finite loss.
class NumericAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace age
