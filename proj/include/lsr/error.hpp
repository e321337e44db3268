#pragma once

#include <stdexcept>
#include <string>

namespace lsr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input, violated invariant, or inconsistent configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Missing or unreadable/unwritable file.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lsr
