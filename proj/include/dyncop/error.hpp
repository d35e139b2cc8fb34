#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dyncop {

/// Classification of library failures. The C API and the CLI map these onto
/// status codes and process exit codes.
enum class ErrorKind {
    domain,         // argument outside the mathematical domain
    parameter,      // invalid model/copula parameters
    consistency,    // inputs disagree with each other (time stamps, shapes)
    invariant,      // a type invariant does not hold
    degenerate,     // conditioning on a null event, division by zero probability
    precondition,   // operation precondition not met
    configuration,  // run configuration is invalid or unstable as requested
    accuracy,       // numerical accuracy guard tripped
    model,          // model cannot be simulated (e.g. indefinite correlation)
    blow_up,        // non-finite state during simulation
    divergence,     // evolved copula left the admissible set
    unsupported,    // dimension or feature not supported
    io,             // file read/write failure
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const char* what) {
    if (!cond) throw Error(kind, what);
}

}  // namespace dyncop
