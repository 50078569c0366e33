#pragma once

#include <stdexcept>
#include <string>

namespace hierbayes {

// Bad schema, unknown column, malformed flag: caller mistakes that the CLI
// reports as usage errors.
class SchemaError : public std::runtime_error {
 public:
  explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or unusable data discovered while loading or validating input.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid run configuration (chain sizes, model/flag combinations).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Failures raised while sampling (non-finite draws, domain violations).
class SamplingError : public std::runtime_error {
 public:
  explicit SamplingError(const std::string& what) : std::runtime_error(what) {}
};

// Convergence gate: diagnostics exceeded their thresholds and the caller did
// not force emission.
class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hierbayes
