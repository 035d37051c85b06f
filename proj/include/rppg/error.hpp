#pragma once

#include <stdexcept>
#include <string>

namespace rppg {

// Base for every recoverable failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input tensor or clip does not match what a layer/model expects.
class ShapeError : public Error {
 public:
  ShapeError(std::size_t layer, const std::string& what)
      : Error("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

// A signal/map violates a numeric precondition (zero variance, no in-band power, ...).
class DegenerateSignal : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace rppg
