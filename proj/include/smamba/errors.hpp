#pragma once

#include <stdexcept>
#include <string>

namespace smamba {

// Shape/extent violations (mismatched matmul extents, bad axis, ...).
struct DimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An operation produced NaN/Inf from finite inputs, or diverged.
struct ComputeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Object used in an invalid state (e.g. backward on a consumed tape).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API contract violation (e.g. backward on a non-scalar loss).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset ingestion failure (ragged rows, non-numeric cells, ...).
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Experimental-protocol violation (split too short for a window, ...).
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid or incomplete run configuration. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Stored artifact does not match the requested configuration. CLI exit code 3.
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace smamba
