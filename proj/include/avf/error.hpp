#pragma once

#include <stdexcept>
#include <string>

namespace avf {

/// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed inputs: manifests, tensor files, configs, CLI usage.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration passed to an API.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Divergence, non-convergence, undefined statistics.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace avf
