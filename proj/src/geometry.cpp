#include "trisplat/geometry.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <string>

#include "trisplat/error.hpp"

namespace trisplat {

void Camera::validate() const {
    const auto& k = intrinsics;
    require(k.width > 0 && k.height > 0, ErrorCode::InvalidCamera, "image size must be positive");
    require(k.fx > 0.0 && k.fy > 0.0, ErrorCode::InvalidCamera, "focal lengths must be positive");
    require(k.cx >= 0.0 && k.cx < k.width && k.cy >= 0.0 && k.cy < k.height, ErrorCode::InvalidCamera,
            "principal point outside the image");
    const Mat3& R = pose.R;
    require(R.allFinite() && pose.t.allFinite(), ErrorCode::InvalidCamera, "non-finite pose");
    require((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9, ErrorCode::InvalidCamera,
            "rotation is not orthonormal");
    require(std::abs(R.determinant() - 1.0) <= 1e-9, ErrorCode::InvalidCamera, "rotation has det != 1");
}

Vec3 Camera::ray_direction(const Vec2& pixel) const {
    const auto& k = intrinsics;
    const Vec3 ray((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
    return pose.R.transpose() * ray;
}

CameraPose look_at(const Vec3& eye, const Vec3& target) {
    const Vec3 z = (target - eye).normalized();
    Vec3 down(0.0, 1.0, 0.0);
    if (std::abs(z.dot(down)) > 0.999) down = Vec3(0.0, 0.0, 1.0);
    const Vec3 x = down.cross(z).normalized();
    const Vec3 y = z.cross(x);
    CameraPose pose;
    pose.R.row(0) = x.transpose();
    pose.R.row(1) = y.transpose();
    pose.R.row(2) = z.transpose();
    pose.t = -pose.R * eye;
    return pose;
}

Projection project(const Camera& cam, const Vec3& p_world) {
    const Vec3 pc = cam.to_camera(p_world);
    if (!(pc.z() > kMinProjectDepth)) {
        fail(ErrorCode::NonPositiveDepth, "point at camera depth " + std::to_string(pc.z()));
    }
    const auto& k = cam.intrinsics;
    return {Vec2(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy), pc.z()};
}

Vec3 back_project(const Camera& cam, const Vec2& pixel, double depth) {
    if (!(depth > 0.0)) fail(ErrorCode::NonPositiveDepth, "back-projection depth " + std::to_string(depth));
    const auto& k = cam.intrinsics;
    const Vec3 pc((pixel.x() - k.cx) / k.fx * depth, (pixel.y() - k.cy) / k.fy * depth, depth);
    return cam.pose.R.transpose() * (pc - cam.pose.t);
}

Vec2 warp_pixel(const Camera& cam_i, const Camera& cam_j, const Vec2& pixel_i, double depth_hyp) {
    return project(cam_j, back_project(cam_i, pixel_i, depth_hyp)).pixel;
}

std::vector<double> sample_depth_hypotheses(double near, double far, int count, DepthSampling mode) {
    if (!(near > 0.0) || !(near < far)) {
        fail(ErrorCode::InvalidRange, "depth range [" + std::to_string(near) + ", " + std::to_string(far) + "]");
    }
    require(count >= 2, ErrorCode::InvalidArgument, "need at least two depth hypotheses");

    std::vector<double> depths(static_cast<std::size_t>(count));
    const double last = count - 1;
    for (int k = 0; k < count; ++k) {
        if (mode == DepthSampling::Uniform) {
            depths[k] = near + k * (far - near) / last;
        } else {
            // uniform in 1/d, reversed so depths increase
            const double inv = 1.0 / near + k * (1.0 / far - 1.0 / near) / last;
            depths[k] = 1.0 / inv;
        }
    }
    depths.front() = near;
    depths.back() = far;
    return depths;
}

}  // namespace trisplat
