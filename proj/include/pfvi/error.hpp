#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pfvi {

enum class ErrorKind {
    Schema,
    Parse,
    Domain,
    Validation,
    Singular,
    SampleSize,
    Unsupported,     // outside the restriction a routine is defined for
    Precondition,
    InternalState,
    DimensionGuard,
    Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a machine-readable kind so the
/// CLI can emit structured error JSON.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace pfvi
