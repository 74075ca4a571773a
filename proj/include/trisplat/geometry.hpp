#pragma once

#include <Eigen/Core>
#include <vector>

namespace trisplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Nearest float32 value. The volatile keeps GCC from folding the
/// double -> float -> double round trip away at -O3.
inline double round_to_float(double x) {
    volatile float f = static_cast<float>(x);
    return f;
}

inline Vec3 round_to_float(const Vec3& p) { return {round_to_float(p.x()), round_to_float(p.y()), round_to_float(p.z())}; }

// Conventions (see docs/cameras.md): right-handed, the camera looks down +z,
// image x points right and y points down, pixel centers sit at integer
// coordinates. Poses map world points into the camera frame: X_c = R X_w + t.

struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
};

struct CameraPose {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
};

struct Camera {
    CameraIntrinsics intrinsics;
    CameraPose pose;

    /// Throws InvalidCamera when an intrinsic or pose invariant is violated.
    void validate() const;

    /// Camera center in world coordinates.
    [[nodiscard]] Vec3 center() const { return -pose.R.transpose() * pose.t; }

    [[nodiscard]] Vec3 to_camera(const Vec3& p_world) const { return pose.R * p_world + pose.t; }

    /// World-space direction d with back_project(pixel, z) = center() + z * d.
    [[nodiscard]] Vec3 ray_direction(const Vec2& pixel) const;
};

/// Builds a world-to-camera pose whose optical axis points from `eye` to
/// `target`, with image y aligned to world +y as far as possible.
CameraPose look_at(const Vec3& eye, const Vec3& target);

struct Projection {
    Vec2 pixel;
    double depth = 0.0;
};

/// Minimum camera-frame depth accepted by project().
inline constexpr double kMinProjectDepth = 1e-9;

Projection project(const Camera& cam, const Vec3& p_world);
Vec3 back_project(const Camera& cam, const Vec2& pixel, double depth);
Vec2 warp_pixel(const Camera& cam_i, const Camera& cam_j, const Vec2& pixel_i, double depth_hyp);

enum class DepthSampling { Uniform, InverseDepth };

/// D depth hypotheses in [near, far], strictly increasing, endpoints exact.
std::vector<double> sample_depth_hypotheses(double near, double far, int count,
                                            DepthSampling mode = DepthSampling::Uniform);

}  // namespace trisplat
