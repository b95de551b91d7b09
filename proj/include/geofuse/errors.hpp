#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace geofuse {

// A violated precondition or shape contract. CLI maps this to exit code 2.
struct ContractViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf or otherwise unusable numerics at runtime. CLI exit code 3.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad config file or bad invocation. CLI exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void msg_cat(std::ostringstream&) {}
template <typename A, typename... Rest>
void msg_cat(std::ostringstream& os, const A& a, const Rest&... rest) {
    os << a;
    msg_cat(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string msg(const Args&... args) {
    std::ostringstream os;
    detail::msg_cat(os, args...);
    return os.str();
}

template <typename... Args>
void require(bool cond, const Args&... args) {
    if (!cond) throw ContractViolation(msg(args...));
}

// Stable process exit codes, part of the CLI contract.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitContract = 2,
    kExitNumerical = 3,
};

}  // namespace geofuse
