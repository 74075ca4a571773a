#pragma once

#include <span>
#include <vector>

#include "trisplat/geometry.hpp"
#include "trisplat/image.hpp"

namespace trisplat {

/// Per-pixel descriptor layout: block-mean RGB (3), |Sobel x|, |Sobel y| of
/// the low-resolution luma (2), mean-subtracted 3x3 luma patch (9).
inline constexpr int kFeatureChannels = 14;

struct FeatureMap {
    int width = 0;
    int height = 0;
    int channels = 0;
    int downsample = 1;
    std::vector<double> data;

    [[nodiscard]] std::span<const double> at(int x, int y) const {
        return {data.data() + (static_cast<std::size_t>(y) * width + x) * channels,
                static_cast<std::size_t>(channels)};
    }
    std::span<double> at(int x, int y) {
        return {data.data() + (static_cast<std::size_t>(y) * width + x) * channels,
                static_cast<std::size_t>(channels)};
    }
};

/// Block-average the image by s in each direction.
Image downsample_mean(const Image& image, int s);

FeatureMap extract_features(const Image& image, int s);

/// Bilinear interpolation at a continuous low-resolution coordinate. Points
/// outside [0, W'-1] x [0, H'-1] sample as the zero vector.
std::vector<double> bilinear_sample(const FeatureMap& fm, const Vec2& pixel);

/// Same as bilinear_sample but writes into `out` (size fm.channels); returns
/// false when the sample fell outside the map.
bool bilinear_sample_into(const FeatureMap& fm, const Vec2& pixel, std::span<double> out);

/// Low-resolution pixel (u, v) expressed in full-resolution pixel coordinates:
/// the center of its s x s block, (u + 0.5) s - 0.5.
inline Vec2 block_center(int u, int v, int s) {
    return {(u + 0.5) * s - 0.5, (v + 0.5) * s - 0.5};
}

/// Inverse of block_center for continuous coordinates.
inline Vec2 full_to_low(const Vec2& full, int s) {
    return {(full.x() + 0.5) / s - 0.5, (full.y() + 0.5) / s - 0.5};
}

}  // namespace trisplat
