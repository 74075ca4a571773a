#pragma once

#include <Eigen/Geometry>
#include <random>

#include "trisplat/geometry.hpp"
#include "trisplat/sh.hpp"
#include "trisplat/surface.hpp"

namespace testutil {

using trisplat::Camera;
using trisplat::Mat3;
using trisplat::Vec3;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
    Eigen::Quaterniond q(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    q.normalize();
    return q.toRotationMatrix();
}

/// Camera somewhere around the origin looking at it.
inline Camera random_camera(std::mt19937_64& rng, int w = 64, int h = 64) {
    Camera cam;
    cam.intrinsics = {uniform(rng, 40, 90), uniform(rng, 40, 90), (w - 1) / 2.0 + uniform(rng, -3, 3),
                      (h - 1) / 2.0 + uniform(rng, -3, 3), w, h};
    const Vec3 eye(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -4, -2.5));
    cam.pose = trisplat::look_at(eye, Vec3(uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), 0.0));
    return cam;
}

/// Independent random triangles near the origin with random opacity and SH.
inline trisplat::TriangleSurface random_triangles(std::mt19937_64& rng, int count, int d_h) {
    trisplat::TriangleSurface s;
    s.sh_size = d_h;
    for (int f = 0; f < count; ++f) {
        const Vec3 c(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
        const auto base = static_cast<std::int32_t>(s.vertices.size());
        for (int k = 0; k < 3; ++k) {
            s.vertices.push_back(c + Vec3(uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6)));
            s.opacity.push_back(uniform(rng, 0, 1));
            for (int j = 0; j < 3 * d_h; ++j) s.sh.push_back(uniform(rng, -1, 1));
        }
        s.faces.push_back({base, base + 1, base + 2});
    }
    return s;
}

/// One triangle with a flat DC color.
inline trisplat::TriangleSurface triangle(const Vec3& a, const Vec3& b, const Vec3& c, double opacity,
                                          const trisplat::Rgb& rgb) {
    trisplat::TriangleSurface s;
    s.vertices = {a, b, c};
    s.opacity = {opacity, opacity, opacity};
    s.sh.assign(9, 0.0);
    for (int i = 0; i < 3; ++i) trisplat::sh_from_rgb(rgb, 1, s.sh_of(i));
    s.faces = {{0, 1, 2}};
    return s;
}

inline void append(trisplat::TriangleSurface& dst, const trisplat::TriangleSurface& src) {
    const auto base = static_cast<std::int32_t>(dst.vertices.size());
    dst.vertices.insert(dst.vertices.end(), src.vertices.begin(), src.vertices.end());
    dst.opacity.insert(dst.opacity.end(), src.opacity.begin(), src.opacity.end());
    dst.sh.insert(dst.sh.end(), src.sh.begin(), src.sh.end());
    for (auto f : src.faces) dst.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
}

/// Full-opacity random triangles with DC colors in [0, 1] and float32 positions:
/// the only loss left in a PLY round trip is the 8-bit color quantization.
inline trisplat::TriangleSurface opaque_export_surface(std::mt19937_64& rng, int count) {
    trisplat::TriangleSurface s = random_triangles(rng, count, 1);
    for (std::size_t i = 0; i < s.num_vertices(); ++i) {
        s.vertices[i] = trisplat::round_to_float(s.vertices[i]);
        s.opacity[i] = 1.0;
        trisplat::sh_from_rgb({uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)}, 1, s.sh_of(i));
    }
    return s;
}

inline Camera simple_camera(int w, int h, double f) {
    Camera cam;
    cam.intrinsics = {f, f, (w - 1) / 2.0, (h - 1) / 2.0, w, h};
    return cam;
}

}  // namespace testutil
