#pragma once

#include <stdexcept>
#include <string>

namespace anatreg {

// Error taxonomy shared across the library. The CLI maps these onto its
// documented exit codes (2 = format/usage, 3 = empty input, 4 = solver).
struct InvalidParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyMaskError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace anatreg
