#pragma once

#include <stdexcept>
#include <string>

namespace qlab {

// Error categories surfaced by the library. The CLI maps each to an exit code.
enum class ErrorKind {
    Domain,       // argument outside the mathematical domain of an operation
    InvalidArgument,
    Input,        // malformed or non-finite input data
    Coverage,     // symbol not representable by a probability model / code
    Corruption,   // inconsistent or damaged serialised data
    Parse,
    Mismatch,
    Infeasible,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string & what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string & what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string & what) {
    if (!cond) {
        fail(kind, what);
    }
}

} // namespace qlab
