#pragma once

#include <stdexcept>
#include <string>

namespace pter {

// Bad configuration: unknown format tags, missing resource files,
// invalid hyper-parameter values. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (bad TSV rows, corrupt binary files).
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Lookup of an entity (user, review, ...) that the dataset does not contain.
class NotFoundError : public std::runtime_error {
public:
  explicit NotFoundError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value surfaced inside a numeric pipeline; message names the layer.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pter
