#pragma once

#include <stdexcept>
#include <string>

namespace tta {

// Shape or rank mismatch between tensors.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid argument value (bad eps, severity out of range, unknown kind, ...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller broke an API contract (non-scalar loss, unnormalized distribution, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// A non-finite value tried to enter a committed tensor.
struct NumericsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training or adaptation produced a non-finite loss. step_index is the
// epoch (pretraining) or batch index (adaptation) at which it happened.
struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& msg, std::size_t step_index)
      : std::runtime_error(msg), step_index(step_index) {}
  std::size_t step_index;
};

// Metric undefined for the given records (empty set, single-class outcome).
struct MetricError : std::domain_error {
  using std::domain_error::domain_error;
};

// Bad experiment configuration (unknown key, missing file, schema mismatch).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File I/O failure or corrupt container.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tta
