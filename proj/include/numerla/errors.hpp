#pragma once

#include <stdexcept>
#include <string>

namespace numerla {

// Invalid or inconsistent configuration values (also used for malformed files).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse: stepping a terminal state, empty inputs, dimension mismatches.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values surfaced from numeric kernels.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Meta-training diverged or failed its post-training evaluation.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sample bank was collected under a different policy version than requested.
struct StaleBankError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Belief puts positive mass on a mode the bank has no samples for.
struct BankCoverageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem / serialization failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace numerla
