#pragma once

#include <stdexcept>
#include <string>

namespace stancelab {

// Error category, mapped 1:1 onto the C API status codes.
enum class ErrorKind {
    InvalidArgument,
    Io,
    Parse,
    Domain,
    Transport,
    Config,
    Internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace stancelab
