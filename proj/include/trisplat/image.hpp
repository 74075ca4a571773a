#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace trisplat {

/// Row-major RGB image with channels interleaved, values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    [[nodiscard]] std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * width + x) * 3 + c;
    }
    double& at(int x, int y, int c) { return data[index(x, y, c)]; }
    [[nodiscard]] double at(int x, int y, int c) const { return data[index(x, y, c)]; }

    [[nodiscard]] bool same_shape(const Image& other) const {
        return width == other.width && height == other.height;
    }
    [[nodiscard]] std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

/// Single-channel row-major float map (rendered depth, gradients w.r.t. depth).
struct ScalarMap {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    ScalarMap() = default;
    ScalarMap(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

using Rgb = std::array<double, 3>;

}  // namespace trisplat
