#pragma once

#include <stdexcept>
#include <string>

namespace mp {

// Malformed, truncated or otherwise unreadable artifact file.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Optimization produced a non-finite loss.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mp
