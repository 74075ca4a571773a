#include "trisplat/error.hpp"

namespace trisplat {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::InvalidCamera: return "InvalidCamera";
        case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
        case ErrorCode::InvalidRange: return "InvalidRange";
        case ErrorCode::IndivisibleResolution: return "IndivisibleResolution";
        case ErrorCode::TooFewViews: return "TooFewViews";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::SizeMismatch: return "SizeMismatch";
        case ErrorCode::DegenerateGrid: return "DegenerateGrid";
        case ErrorCode::InvalidSurface: return "InvalidSurface";
        case ErrorCode::NonUnitDirection: return "NonUnitDirection";
        case ErrorCode::StaleFragmentCache: return "StaleFragmentCache";
        case ErrorCode::TooSmall: return "TooSmall";
        case ErrorCode::DegenerateCloud: return "DegenerateCloud";
        case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::PrimitiveBehindCamera: return "PrimitiveBehindCamera";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::UnrepresentableCount: return "UnrepresentableCount";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace trisplat
