#include "trisplat/depthvol.hpp"

#include <algorithm>
#include <cmath>

#include "trisplat/error.hpp"
#include "trisplat/parallel.hpp"

namespace trisplat {

namespace {

// Softmax weights of one pixel's scores; returns the unclamped weighted depth.
double softmax_depth(std::span<const double> scores, std::span<const double> depths, double temperature,
                     std::span<double> weights) {
    double max_score = scores[0];
    for (double s : scores) max_score = std::max(max_score, s);
    double z = 0.0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        weights[k] = std::exp((scores[k] - max_score) / temperature);
        z += weights[k];
    }
    double depth = 0.0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        weights[k] /= z;
        depth += weights[k] * depths[k];
    }
    return depth;
}

}  // namespace

CostVolume build_cost_volume(std::span<const FeatureMap> features, std::span<const Camera> cams, int ref,
                             std::span<const double> depths) {
    const std::size_t n = features.size();
    if (n < 2) fail(ErrorCode::TooFewViews, "cost volume needs at least two views");
    require(cams.size() == n, ErrorCode::ShapeMismatch, "one camera per feature map required");
    require(ref >= 0 && static_cast<std::size_t>(ref) < n, ErrorCode::InvalidArgument, "reference index");
    require(!depths.empty(), ErrorCode::InvalidArgument, "no depth hypotheses");
    for (std::size_t k = 1; k < depths.size(); ++k) {
        require(depths[k] > depths[k - 1], ErrorCode::InvalidArgument, "depth hypotheses must increase");
    }
    const FeatureMap& fr = features[ref];
    for (const auto& f : features) {
        require(f.width == fr.width && f.height == fr.height && f.channels == fr.channels &&
                    f.downsample == fr.downsample,
                ErrorCode::ShapeMismatch, "feature maps differ in shape");
    }

    CostVolume cv;
    cv.width = fr.width;
    cv.height = fr.height;
    cv.ref_view = ref;
    cv.depths.assign(depths.begin(), depths.end());
    const std::size_t D = depths.size();
    cv.scores.assign(static_cast<std::size_t>(cv.width) * cv.height * D, 0.0);

    const int s = fr.downsample;
    const double inv_views = 1.0 / static_cast<double>(n - 1);

    // one task per reference row; each task owns its rows' score slots
    parallel_for(static_cast<std::size_t>(cv.height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        std::vector<double> sample(static_cast<std::size_t>(fr.channels));
        for (int x = 0; x < cv.width; ++x) {
            const auto f_ref = fr.at(x, y);
            auto out = cv.at(x, y);
            const Vec2 full = block_center(x, y, s);
            for (std::size_t k = 0; k < D; ++k) {
                const Vec3 p = back_project(cams[ref], full, depths[k]);
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == static_cast<std::size_t>(ref)) continue;
                    const Vec3 pc = cams[j].to_camera(p);
                    if (!(pc.z() > kMinProjectDepth)) continue;
                    const Vec2 warped = project(cams[j], p).pixel;
                    if (!bilinear_sample_into(features[j], full_to_low(warped, s), sample)) continue;
                    double dot = 0.0;
                    for (int c = 0; c < fr.channels; ++c) dot += f_ref[c] * sample[c];
                    acc += dot;
                }
                out[k] = acc * inv_views;
            }
        }
    });
    return cv;
}

DepthMap regress_depth(const CostVolume& cv, double temperature) {
    require(temperature > 0.0, ErrorCode::InvalidArgument, "temperature must be positive");
    DepthMap dm(cv.width, cv.height, 0.0, true);
    const double lo = cv.depths.front();
    const double hi = cv.depths.back();
    std::vector<double> weights(cv.depths.size());
    for (int y = 0; y < cv.height; ++y) {
        for (int x = 0; x < cv.width; ++x) {
            const double d = softmax_depth(cv.at(x, y), cv.depths, temperature, weights);
            dm.at(x, y) = std::clamp(d, lo, hi);
        }
    }
    return dm;
}

std::vector<double> regress_depth_backward(const CostVolume& cv, double temperature,
                                           std::span<const double> grad_depth) {
    require(temperature > 0.0, ErrorCode::InvalidArgument, "temperature must be positive");
    if (grad_depth.size() != static_cast<std::size_t>(cv.width) * cv.height) {
        fail(ErrorCode::ShapeMismatch, "depth gradient does not match cost volume");
    }
    const std::size_t D = cv.depths.size();
    std::vector<double> grad(cv.scores.size(), 0.0);
    std::vector<double> weights(D);
    for (int y = 0; y < cv.height; ++y) {
        for (int x = 0; x < cv.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * cv.width + x;
            const double g = grad_depth[p];
            if (g == 0.0) continue;
            const double d = softmax_depth(cv.at(x, y), cv.depths, temperature, weights);
            for (std::size_t k = 0; k < D; ++k) {
                grad[p * D + k] = g * (cv.depths[k] - d) * weights[k] / temperature;
            }
        }
    }
    return grad;
}

}  // namespace trisplat
