#pragma once

#include <stdexcept>
#include <string>

namespace latcomp {

// Base of every error raised by the library. The CLI maps ConfigError to
// exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value. `key()` names the offending setting when known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message, std::string key = {})
      : Error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Operation not supported by the selected backend or extractor.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Attention has no keys left after exclusion.
class EmptyContextError : public Error {
 public:
  using Error::Error;
};

class AbsentEntryError : public Error {
 public:
  using Error::Error;
};

// Misuse of a stateful object (double cache write, out-of-order log row).
class StateError : public Error {
 public:
  using Error::Error;
};

class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& message, std::string path)
      : Error(path + ": " + message), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace latcomp
