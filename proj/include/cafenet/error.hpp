#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cafenet {

// Error categories. The CLI maps each category to a distinct exit code.
enum class ErrorKind {
    InvalidInput,   // bad argument value or malformed array
    MissingSource,  // source directory or referenced file absent
    EmptyInput,     // nothing to process
    InvalidSource,  // source data violates its contract (e.g. non-binary mask)
    BuildError,     // dataset construction failed (missing classes, ...)
    Schema,         // manifest/checkpoint/config does not parse
    Overlap,        // train/test class sets intersect
    Shape,          // tensor or raster dimension mismatch
    Config,         // invalid model/train configuration
    Numeric,        // non-finite values
    Sampling,       // episode cannot be drawn
    Corruption,     // truncated or checksum-failing file
    Version,        // unsupported schema version
    Mismatch,       // checkpoint/protocol/config incompatibility
    Io,             // write failure
};

std::string_view to_string(ErrorKind kind);

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

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition)
        throw Error(kind, message);
}

} // namespace cafenet
