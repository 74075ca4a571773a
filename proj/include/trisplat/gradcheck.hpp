#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace trisplat {

enum class GradComponent { Raster, Losses, Depthvol, Head, EndToEnd, All };

std::optional<GradComponent> parse_grad_component(std::string_view name);
std::string_view to_string(GradComponent c);

inline constexpr double kPositionTolerance = 1e-3;
inline constexpr double kDefaultTolerance = 1e-4;
/// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kRelErrorFloor = 1e-6;

struct GradCheckOptions {
    GradComponent component = GradComponent::All;
    std::uint64_t seed = 7;
    int probes = 0;  ///< per component; 0 picks the component default
    /// Test hook: flips the sign of the analytic opacity gradient in the raster
    /// component so the checker must report failures.
    bool corrupt_adjoint = false;
};

struct ProbeResult {
    std::string component;
    std::string quantity;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
    double tolerance = 0.0;
    [[nodiscard]] bool pass() const { return rel_error <= tolerance; }
};

struct GradCheckReport {
    std::vector<ProbeResult> probes;
    std::size_t skipped = 0;  ///< probes dropped because a non-smooth structure changed within +-h
    double max_rel_error = 0.0;
    std::size_t failures = 0;

    [[nodiscard]] bool passed() const { return failures == 0 && !probes.empty(); }
};

double relative_error(double analytic, double numeric);

GradCheckReport grad_check(const GradCheckOptions& options);

nlohmann::json to_json(const GradCheckReport& report);

}  // namespace trisplat
