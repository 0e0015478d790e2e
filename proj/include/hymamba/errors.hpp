#pragma once

#include <stdexcept>
#include <string>

namespace hym {

// Shapes of operands do not agree.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller violated an operation's precondition.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value or key.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Object used in a state that forbids the call (e.g. a consumed tape).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN / Inf where finite values are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hym
