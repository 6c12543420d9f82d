#pragma once

#include <stdexcept>
#include <string>

namespace mfc {

/// Failure categories surfaced by the library. The CLI maps them to exit
/// codes and machine-readable error records.
enum class ErrorCode {
    InvalidArgument,
    DimensionMismatch,
    EmptyMeasure,
    MassLeak,
    NegativeDensity,
    BlowUp,
    NotConverged,
    Inadmissible,
    MemoryBudget,
    MissingDerivative,
    OutOfDomain,
    Config,
    UnknownDescriptor,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) fail(code, message);
}

}  // namespace mfc
