#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gestinv {

// Tensor shapes or array extents disagree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A diffusion step produced NaN/Inf. Carries the (local) timestep so callers
// can report where a chain blew up.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, int step, double max_abs)
      : std::runtime_error(what), step_(step), max_abs_(max_abs) {}

  int step() const noexcept { return step_; }
  double max_abs() const noexcept { return max_abs_; }

 private:
  int step_;
  double max_abs_;
};

class InversionError : public std::runtime_error {
 public:
  InversionError(const std::string& what, int step)
      : std::runtime_error(what), step_(step) {}

  int step() const noexcept { return step_; }

 private:
  int step_;
};

// Malformed file. offset is a byte offset for binary formats and a line
// number for text formats.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace gestinv
