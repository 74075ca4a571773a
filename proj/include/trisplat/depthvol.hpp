#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "trisplat/features.hpp"
#include "trisplat/geometry.hpp"

namespace trisplat {

/// Correlation scores of one reference view against every depth hypothesis.
/// Layout: scores[(y * width + x) * D + k].
struct CostVolume {
    int width = 0;
    int height = 0;
    int ref_view = 0;
    std::vector<double> depths;
    std::vector<double> scores;

    [[nodiscard]] int num_hypotheses() const { return static_cast<int>(depths.size()); }
    [[nodiscard]] std::span<const double> at(int x, int y) const {
        return {scores.data() + (static_cast<std::size_t>(y) * width + x) * depths.size(), depths.size()};
    }
    std::span<double> at(int x, int y) {
        return {scores.data() + (static_cast<std::size_t>(y) * width + x) * depths.size(), depths.size()};
    }
};

/// Camera-frame z per low-resolution pixel plus a validity mask.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> depth;
    std::vector<std::uint8_t> valid;

    DepthMap() = default;
    DepthMap(int w, int h, double fill = 0.0, bool is_valid = true)
        : width(w), height(h), depth(static_cast<std::size_t>(w) * h, fill),
          valid(static_cast<std::size_t>(w) * h, is_valid ? 1 : 0) {}

    double& at(int x, int y) { return depth[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] double at(int x, int y) const { return depth[static_cast<std::size_t>(y) * width + x]; }
};

/// Plane sweep: for each reference pixel and hypothesis, the mean over the
/// other views of dot(F_ref, warped F_j). Warps that leave a view or land
/// behind it contribute zero but still count in the denominator.
CostVolume build_cost_volume(std::span<const FeatureMap> features, std::span<const Camera> cams, int ref,
                             std::span<const double> depths);

/// Softmax(score / temperature)-weighted mean of the hypotheses.
DepthMap regress_depth(const CostVolume& cv, double temperature);

/// Adjoint of regress_depth: d depth / d score_k = (d_k - depth) w_k / temperature.
std::vector<double> regress_depth_backward(const CostVolume& cv, double temperature,
                                           std::span<const double> grad_depth);

}  // namespace trisplat
