#include "expjac/errors.hpp"

namespace expjac {

std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::UnsupportedPrecision: return "UnsupportedPrecision";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ShapeTooSmall: return "ShapeTooSmall";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::PlanMismatch: return "PlanMismatch";
    case ErrorCode::UnknownStructure: return "UnknownStructure";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Diverged: return "Diverged";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code)
{
}

} // namespace expjac
