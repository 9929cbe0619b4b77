#pragma once

#include <stdexcept>
#include <string>

namespace jsbnn {

/// A computation produced NaN/Inf or an otherwise unusable number.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (CSV rows, labels, schema).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Experiment configuration errors; messages carry the offending field path.
class ConfigError : public std::runtime_error {
public:
  ConfigError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}

  [[nodiscard]] const std::string& path() const { return path_; }

private:
  std::string path_;
};

}  // namespace jsbnn
