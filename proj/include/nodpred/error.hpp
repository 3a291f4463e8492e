#pragma once

#include <stdexcept>
#include <string>

namespace nodpred {

enum class ErrorKind {
    // validation: bad input, flags, or configuration (CLI exit code 1)
    Config,
    Shape,
    Range,
    Format,
    UnsupportedRate,
    Usage,
    // runtime failures (CLI exit code 2)
    Io,
    Horizon,
    Empty,
    InsufficientData,
    NonFinite,
};

const char* to_string(ErrorKind kind) noexcept;

bool is_validation(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace nodpred
