#pragma once

#include <stdexcept>
#include <string>

namespace fluxcal {

// Exit codes used by the CLI. Library code throws the typed exceptions
// below; the CLI maps them to these codes.
enum ExitCode : int {
    EXIT_OK = 0,
    EXIT_USAGE = 2,      // bad flags / malformed invocation
    EXIT_VALIDATION = 3, // inputs parsed but violate a documented precondition
    EXIT_NUMERICAL = 4,  // solver / geometry failure on valid inputs
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace fluxcal
