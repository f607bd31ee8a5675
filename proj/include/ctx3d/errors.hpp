#pragma once

#include <stdexcept>
#include <string>

namespace ctx3d {

// Malformed or inconsistent input data (files, annotations, volumes).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values during training or gradient evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ctx3d
