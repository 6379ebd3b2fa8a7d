#pragma once

#include <stdexcept>
#include <string>

namespace samba {

// Error taxonomy. Each class maps onto one CLI exit code (see tools/cli.cpp):
// config/usage -> 2, numerical abort -> 3, corrupt artifact -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };       // dimension mismatches
struct ContractError : Error { using Error::Error; };    // violated preconditions
struct ValidationError : Error { using Error::Error; };  // bad labels or masks
struct ConfigError : Error { using Error::Error; };      // config files, CLI usage
struct NumericError : Error { using Error::Error; };     // non-finite forward values
struct TrainingError : Error { using Error::Error; };    // aborted optimization
struct CheckpointError : Error { using Error::Error; };  // unreadable checkpoints
struct MetricError : Error { using Error::Error; };      // undefined metric requests
struct OracleError : Error { using Error::Error; };      // gradient oracle failures
struct ManifestError : Error { using Error::Error; };    // dataset layout problems

}  // namespace samba
