#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace expjac {

enum class ErrorCode {
    BadMagic,
    ShapeMismatch,
    TruncatedPayload,
    UnsupportedPrecision,
    IoFailure,
    ShapeTooSmall,
    NonFiniteInput,
    PlanMismatch,
    UnknownStructure,
    InvalidArgument,
    Diverged,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so the
// CLI can map it onto an exit status without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace expjac
