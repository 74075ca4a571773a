#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "trisplat/geometry.hpp"
#include "trisplat/image.hpp"
#include "trisplat/surface.hpp"

namespace trisplat {

inline constexpr int kTileSize = 16;
/// Faces with any vertex at or in front of this camera depth are culled.
inline constexpr double kNearCull = 1e-6;

/// One triangle's contribution at one pixel.
struct Fragment {
    std::int32_t face = 0;
    std::array<double, 3> weights{};  ///< perspective-correct barycentrics
    double depth = 0.0;
    double alpha = 0.0;
    Rgb rgb{};
};

struct RenderOutput {
    Image color;
    ScalarMap depth;  ///< sum_i z_i o_i T_i (background contributes zero)
    /// Composited fragments of pixel p are fragments[offsets[p] .. offsets[p+1]),
    /// front to back.
    std::vector<Fragment> fragments;
    std::vector<std::uint32_t> offsets;
    Rgb background{};
    std::uint64_t fingerprint = 0;

    [[nodiscard]] std::size_t fragment_count(int x, int y) const {
        const std::size_t p = static_cast<std::size_t>(y) * color.width + x;
        return offsets[p + 1] - offsets[p];
    }
};

/// Tiled forward renderer: hard-edged triangles (top-left fill rule),
/// per-pixel depth sort, front-to-back alpha compositing.
RenderOutput rasterize(const TriangleSurface& surf, const Camera& cam, const Rgb& bg);

/// Brute-force oracle with the same contract as rasterize: every pixel tests
/// every face, no tiling. Test and ground-truth use only.
Image reference_render(const TriangleSurface& surf, const Camera& cam, const Rgb& bg);

struct ReferenceRender {
    Image color;
    ScalarMap depth;
};
ReferenceRender reference_render_with_depth(const TriangleSurface& surf, const Camera& cam, const Rgb& bg);

struct SurfaceGradients {
    std::vector<double> opacity;
    std::vector<double> sh;
    std::vector<Vec3> vertices;
};

/// Exact adjoint of rasterize with coverage and fragment order held fixed.
/// Throws StaleFragmentCache when surf/cam differ from the forward pass.
SurfaceGradients rasterize_backward(const RenderOutput& out, const TriangleSurface& surf, const Camera& cam,
                                    const Image& grad_color, const ScalarMap& grad_depth);

/// Hash of everything the forward pass depends on.
std::uint64_t render_fingerprint(const TriangleSurface& surf, const Camera& cam, const Rgb& bg);

}  // namespace trisplat
