#pragma once

// Per-vertex and per-face setup shared by the tiled rasterizer, the oracle
// and the adjoint. Any change here changes all three consistently.

#include <array>
#include <vector>

#include "trisplat/raster.hpp"

namespace trisplat::detail {

struct ScreenVertex {
    Vec2 xy = Vec2::Zero();
    Vec3 pc = Vec3::Zero();  // camera-frame position
    bool in_front = false;
};

struct VertexShade {
    Rgb rgb{};
    std::array<bool, 3> clamped{};
    Vec3 dir = Vec3::UnitZ();
    double dist = 0.0;
};

struct FaceSetup {
    bool active = false;
    std::array<std::int32_t, 3> idx{};
    std::array<Vec2, 3> p{};
    std::array<double, 3> z{};
    double orient = 1.0;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds, clipped
};

std::vector<ScreenVertex> project_vertices(const TriangleSurface& surf, const Camera& cam);
std::vector<VertexShade> shade_vertices(const TriangleSurface& surf, const Camera& cam,
                                        const std::vector<ScreenVertex>& sv);
FaceSetup setup_face(const TriangleSurface& surf, std::size_t face, const std::vector<ScreenVertex>& sv,
                     int width, int height);

/// (b - a) x (p - a), evaluated with a canonical endpoint order so that the
/// two faces sharing an edge see exactly negated values.
double edge_value(const Vec2& a, const Vec2& b, double px, double py);

/// Oriented edge values (positive inside) at pixel center (px, py); returns
/// true when the pixel is covered under the top-left rule.
bool covers(const FaceSetup& fs, int px, int py, std::array<double, 3>& e);

Fragment make_fragment(const FaceSetup& fs, std::int32_t face, const std::array<double, 3>& e,
                       const TriangleSurface& surf, const std::vector<VertexShade>& shade);

inline bool fragment_less(const Fragment& a, const Fragment& b) {
    return a.depth < b.depth || (a.depth == b.depth && a.face < b.face);
}

}  // namespace trisplat::detail
