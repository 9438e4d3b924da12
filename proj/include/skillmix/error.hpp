#pragma once

#include <stdexcept>
#include <string>

namespace skillmix {

/// Base of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Configuration is missing a field or holds an invalid value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace skillmix
