#pragma once

#include <stdexcept>
#include <string>

namespace nconv {

// Base class for every failure raised by the library. The concrete types map
// one-to-one onto the error conditions named in the public contracts.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class SingularGrammian : public Error {
 public:
  using Error::Error;
};

class DegenerateBasis : public Error {
 public:
  using Error::Error;
};

class ZeroVariance : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace nconv
