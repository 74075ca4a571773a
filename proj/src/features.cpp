#include "trisplat/features.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trisplat/error.hpp"

namespace trisplat {

namespace {

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

}  // namespace

Image downsample_mean(const Image& image, int s) {
    require(s >= 1, ErrorCode::InvalidArgument, "downsample factor must be >= 1");
    if (image.width % s != 0 || image.height % s != 0) {
        fail(ErrorCode::IndivisibleResolution, std::to_string(image.width) + "x" + std::to_string(image.height) +
                                                   " not divisible by " + std::to_string(s));
    }
    const int w = image.width / s;
    const int h = image.height / s;
    Image out(w, h);
    const double inv = 1.0 / (s * s);
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            for (int c = 0; c < 3; ++c) {
                double sum = 0.0;
                for (int dy = 0; dy < s; ++dy) {
                    for (int dx = 0; dx < s; ++dx) sum += image.at(u * s + dx, v * s + dy, c);
                }
                out.at(u, v, c) = sum * inv;
            }
        }
    }
    return out;
}

FeatureMap extract_features(const Image& image, int s) {
    const Image low = downsample_mean(image, s);
    const int w = low.width;
    const int h = low.height;

    std::vector<double> gray(static_cast<std::size_t>(w) * h);
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) gray[v * w + u] = luma(low.at(u, v, 0), low.at(u, v, 1), low.at(u, v, 2));
    }
    // clamp-to-edge addressing
    auto g = [&](int u, int v) {
        u = std::clamp(u, 0, w - 1);
        v = std::clamp(v, 0, h - 1);
        return gray[v * w + u];
    };

    FeatureMap fm;
    fm.width = w;
    fm.height = h;
    fm.channels = kFeatureChannels;
    fm.downsample = s;
    fm.data.assign(static_cast<std::size_t>(w) * h * kFeatureChannels, 0.0);

    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            auto f = fm.at(u, v);
            f[0] = low.at(u, v, 0);
            f[1] = low.at(u, v, 1);
            f[2] = low.at(u, v, 2);

            const double gx = (g(u + 1, v - 1) + 2.0 * g(u + 1, v) + g(u + 1, v + 1)) -
                              (g(u - 1, v - 1) + 2.0 * g(u - 1, v) + g(u - 1, v + 1));
            const double gy = (g(u - 1, v + 1) + 2.0 * g(u, v + 1) + g(u + 1, v + 1)) -
                              (g(u - 1, v - 1) + 2.0 * g(u, v - 1) + g(u + 1, v - 1));
            f[3] = std::abs(gx);
            f[4] = std::abs(gy);

            double patch[9];
            double mean = 0.0;
            for (int k = 0; k < 9; ++k) {
                patch[k] = g(u + k % 3 - 1, v + k / 3 - 1);
                mean += patch[k];
            }
            mean /= 9.0;
            for (int k = 0; k < 9; ++k) f[5 + k] = patch[k] - mean;

            double norm2 = 0.0;
            for (double x : f) norm2 += x * x;
            const double norm = std::sqrt(norm2);
            if (norm > 1e-12) {
                for (double& x : f) x /= norm;
            } else {
                std::fill(f.begin(), f.end(), 0.0);
            }
        }
    }
    return fm;
}

bool bilinear_sample_into(const FeatureMap& fm, const Vec2& pixel, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    const double x = pixel.x();
    const double y = pixel.y();
    if (!(x >= 0.0 && y >= 0.0 && x <= fm.width - 1 && y <= fm.height - 1)) return false;

    const int x0 = std::min(static_cast<int>(std::floor(x)), fm.width - 1);
    const int y0 = std::min(static_cast<int>(std::floor(y)), fm.height - 1);
    const int x1 = std::min(x0 + 1, fm.width - 1);
    const int y1 = std::min(y0 + 1, fm.height - 1);
    const double ax = x - x0;
    const double ay = y - y0;

    const auto f00 = fm.at(x0, y0);
    const auto f10 = fm.at(x1, y0);
    const auto f01 = fm.at(x0, y1);
    const auto f11 = fm.at(x1, y1);
    const double w00 = (1.0 - ax) * (1.0 - ay);
    const double w10 = ax * (1.0 - ay);
    const double w01 = (1.0 - ax) * ay;
    const double w11 = ax * ay;
    for (int c = 0; c < fm.channels; ++c) {
        out[c] = w00 * f00[c] + w10 * f10[c] + w01 * f01[c] + w11 * f11[c];
    }
    return true;
}

std::vector<double> bilinear_sample(const FeatureMap& fm, const Vec2& pixel) {
    std::vector<double> out(static_cast<std::size_t>(fm.channels));
    bilinear_sample_into(fm, pixel, out);
    return out;
}

}  // namespace trisplat
