#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trisplat {

enum class ErrorCode {
    InvalidArgument,
    InvalidCamera,
    NonPositiveDepth,
    InvalidRange,
    IndivisibleResolution,
    TooFewViews,
    ShapeMismatch,
    SizeMismatch,
    DegenerateGrid,
    InvalidSurface,
    NonUnitDirection,
    StaleFragmentCache,
    TooSmall,
    DegenerateCloud,
    NonFiniteGradient,
    NonFiniteLoss,
    PrimitiveBehindCamera,
    IoFailure,
    ParseError,
    UnrepresentableCount,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library; the code says what went wrong,
/// the message says where.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

    /// True for failures caused by bad numbers rather than bad data.
    [[nodiscard]] bool is_numerical() const noexcept {
        return code_ == ErrorCode::NonFiniteGradient || code_ == ErrorCode::NonFiniteLoss;
    }

private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const char* message) {
    if (!condition) fail(code, message);
}

}  // namespace trisplat
