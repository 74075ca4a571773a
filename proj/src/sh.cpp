#include "trisplat/sh.hpp"

#include <algorithm>
#include <cmath>

#include "trisplat/error.hpp"

namespace trisplat {

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};

}  // namespace

void sh_basis(const Vec3& dir, int d_h, std::span<double> out) {
    require(valid_sh_size(d_h), ErrorCode::InvalidArgument, "SH size must be 1, 4 or 9");
    const double x = dir.x(), y = dir.y(), z = dir.z();
    out[0] = kShC0;
    if (d_h > 1) {
        out[1] = -kC1 * y;
        out[2] = kC1 * z;
        out[3] = -kC1 * x;
    }
    if (d_h > 4) {
        out[4] = kC2[0] * x * y;
        out[5] = kC2[1] * y * z;
        out[6] = kC2[2] * (2.0 * z * z - x * x - y * y);
        out[7] = kC2[3] * x * z;
        out[8] = kC2[4] * (x * x - y * y);
    }
}

void sh_basis_grad(const Vec3& dir, int d_h, std::span<Vec3> out) {
    require(valid_sh_size(d_h), ErrorCode::InvalidArgument, "SH size must be 1, 4 or 9");
    const double x = dir.x(), y = dir.y(), z = dir.z();
    out[0] = Vec3::Zero();
    if (d_h > 1) {
        out[1] = Vec3(0.0, -kC1, 0.0);
        out[2] = Vec3(0.0, 0.0, kC1);
        out[3] = Vec3(-kC1, 0.0, 0.0);
    }
    if (d_h > 4) {
        out[4] = kC2[0] * Vec3(y, x, 0.0);
        out[5] = kC2[1] * Vec3(0.0, z, y);
        out[6] = kC2[2] * Vec3(-2.0 * x, -2.0 * y, 4.0 * z);
        out[7] = kC2[3] * Vec3(z, 0.0, x);
        out[8] = kC2[4] * Vec3(2.0 * x, -2.0 * y, 0.0);
    }
}

ShColor eval_sh(std::span<const double> coeffs, int d_h, const Vec3& view_dir) {
    if (std::abs(view_dir.norm() - 1.0) > 1e-6) fail(ErrorCode::NonUnitDirection, "view direction is not unit");
    require(coeffs.size() == static_cast<std::size_t>(3 * d_h), ErrorCode::ShapeMismatch, "SH coefficient count");
    double basis[9];
    sh_basis(view_dir, d_h, basis);
    ShColor out;
    for (int c = 0; c < 3; ++c) {
        double v = 0.5;
        for (int k = 0; k < d_h; ++k) v += coeffs[c * d_h + k] * basis[k];
        out.clamped[c] = v < 0.0 || v > 1.0;
        out.rgb[c] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

void sh_from_rgb(const Rgb& rgb, int d_h, std::span<double> coeffs) {
    for (int c = 0; c < 3; ++c) {
        for (int k = 0; k < d_h; ++k) coeffs[c * d_h + k] = 0.0;
        coeffs[c * d_h] = (rgb[c] - 0.5) / kShC0;
    }
}

}  // namespace trisplat
