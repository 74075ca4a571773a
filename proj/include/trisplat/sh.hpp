#pragma once

#include <array>
#include <span>

#include "trisplat/geometry.hpp"
#include "trisplat/image.hpp"

namespace trisplat {

/// Constant real SH basis function, 1 / (2 sqrt(pi)).
inline constexpr double kShC0 = 0.28209479177387814;

/// Supported coefficient counts per channel: degree 0, 1 or 2.
inline bool valid_sh_size(int d_h) { return d_h == 1 || d_h == 4 || d_h == 9; }

/// Real SH basis values Y_k(dir), k < d_h (3DGS sign convention).
void sh_basis(const Vec3& dir, int d_h, std::span<double> out);

/// Gradient of each basis function w.r.t. the (unnormalized) components of dir.
void sh_basis_grad(const Vec3& dir, int d_h, std::span<Vec3> out);

struct ShColor {
    Rgb rgb{};
    std::array<bool, 3> clamped{};  ///< channel was outside [0, 1] before clamping
};

/// rgb_c = clamp(0.5 + sum_k coeffs[c * d_h + k] Y_k(dir), 0, 1).
/// Throws NonUnitDirection when |dir| differs from 1 by more than 1e-6.
ShColor eval_sh(std::span<const double> coeffs, int d_h, const Vec3& view_dir);

/// SH coefficients (DC only, d_h slots) that evaluate to `rgb` for any direction.
void sh_from_rgb(const Rgb& rgb, int d_h, std::span<double> coeffs);

}  // namespace trisplat
