#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spinealign {

// Base for every error raised by the library. Callers that only care about
// "did it work" catch this; the subclasses carry the failure category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Unreadable or malformed input file. `offset` is the byte offset at which
// parsing failed, or npos when the failure is not positional.
class ParseError : public Error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  ParseError(const std::string& what, std::size_t offset = npos)
      : Error(offset == npos ? what : what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

// A label references a cloud whose content hash no longer matches.
class StaleReference : public Error {
 public:
  using Error::Error;
};

class OptimizerAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace spinealign
