#pragma once

#include <optional>
#include <string>

#include "trisplat/image.hpp"
#include "trisplat/surface.hpp"

namespace trisplat {

/// Value of a scalar loss and its gradient w.r.t. the first argument.
template <typename Grad>
struct LossValue {
    double value = 0.0;
    Grad grad;
};

LossValue<Image> l1_loss(const Image& rendered, const Image& gt);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Mean single-scale SSIM over 'valid' 11x11 Gaussian windows, averaged over
/// channels. Gradient is d ssim / d rendered.
LossValue<Image> ssim(const Image& rendered, const Image& gt);

/// Forward-only SSIM (no gradient buffers).
double ssim_value(const Image& rendered, const Image& gt);

inline constexpr double kPsnrCap = 120.0;
double psnr(const Image& rendered, const Image& gt);

/// Edge-aware depth smoothness over pixels where both forward differences exist.
LossValue<ScalarMap> depth_smoothness(const ScalarMap& depth, const Image& gt);

/// Nearest-neighbour upsampling of a depth map by an integer factor, and its adjoint.
ScalarMap upsample_nearest(const ScalarMap& depth, int factor);
ScalarMap upsample_nearest_backward(const ScalarMap& grad, int factor);

/// Linear-interpolation quantile at zero-based rank alpha (M - 1) of sorted values.
double quantile(std::vector<double> values, double alpha);

/// Coordinatewise median (mean of the two middle values for even counts).
Vec3 coordinate_median(const PointCloud& x);

/// Subtract the coordinatewise median, divide by the alpha-quantile of the
/// centered norms. Throws DegenerateCloud when that scale is below 1e-12.
PointCloud robust_normalize(const PointCloud& x, double alpha);

/// Mean squared distance between normalized clouds; gradient w.r.t. v.
LossValue<std::vector<Vec3>> point_loss(const PointCloud& v, const PointCloud& p, double alpha);

struct LossWeights {
    double perceptual = 0.05;
    double ds = 0.1;
    double points = 0.0;
};

struct LossReport {
    double l1 = 0.0;
    double perceptual = 0.0;  ///< 1 - ssim
    double ds = 0.0;
    double points = 0.0;
    double total = 0.0;
    LossWeights weights;
};

struct TotalLoss {
    LossReport report;
    Image grad_rendered;
    ScalarMap grad_depth;
    std::vector<Vec3> grad_points;  ///< empty when the point term is off
};

/// Weighted loss for one rendered view. The point term is evaluated only when
/// weights.points > 0 and both clouds are given.
TotalLoss total_loss(const Image& rendered, const Image& gt, const ScalarMap& d_render, const PointCloud* v,
                     const PointCloud* p, const LossWeights& weights, double alpha);

/// One JSON line: step, l1, perceptual, ds, points, total, lambda_points.
std::string loss_report_json(long step, const LossReport& report);

}  // namespace trisplat
