#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "trisplat/depthvol.hpp"
#include "trisplat/geometry.hpp"

namespace trisplat {

using Face = std::array<std::int32_t, 3>;

/// Explicit triangle surface with per-vertex opacity and SH color.
/// SH layout: sh[(i * 3 + channel) * sh_size + k].
struct TriangleSurface {
    std::vector<Vec3> vertices;
    std::vector<double> opacity;
    std::vector<double> sh;
    int sh_size = 1;
    std::vector<Face> faces;
    double sigma = 0.0;

    [[nodiscard]] std::size_t num_vertices() const { return vertices.size(); }
    [[nodiscard]] std::size_t num_faces() const { return faces.size(); }

    [[nodiscard]] std::span<const double> sh_of(std::size_t i) const {
        return {sh.data() + i * 3 * sh_size, static_cast<std::size_t>(3 * sh_size)};
    }
    std::span<double> sh_of(std::size_t i) {
        return {sh.data() + i * 3 * sh_size, static_cast<std::size_t>(3 * sh_size)};
    }

    /// Throws InvalidSurface on any broken invariant.
    void validate() const;
};

using PointCloud = std::vector<Vec3>;

/// Pixel-aligned faces over n views of an Hp x Wp vertex grid. Vertex ids are
/// view-major then row-major; every pixel emits up to two faces, one towards
/// (u+1, v), (u, v+1) and one towards (u-1, v), (u, v-1).
std::vector<Face> generate_connectivity(int n, int rows, int cols);

/// MLP weights for the triangle head: in -> hidden -> hidden -> 1 + 3 d_h.
/// Matrices are stored as (fan_in x fan_out) so a batch X (P x in) maps to X W + b.
struct TriangleHeadParams {
    Eigen::MatrixXd w1, w2, w3;
    Eigen::RowVectorXd b1, b2, b3;

    static TriangleHeadParams zeros(int in, int hidden, int out);
    static TriangleHeadParams random(int in, int hidden, int out, std::uint64_t seed);

    [[nodiscard]] int input_size() const { return static_cast<int>(w1.rows()); }
    [[nodiscard]] int output_size() const { return static_cast<int>(w3.cols()); }
    [[nodiscard]] std::size_t parameter_count() const;

    /// Flat view order: w1, b1, w2, b2, w3, b3 (column-major matrices).
    [[nodiscard]] std::vector<double> pack() const;
    void unpack(std::span<const double> flat);
    [[nodiscard]] bool all_finite() const;
};

/// Forward activations retained for the backward pass.
struct HeadCache {
    Eigen::MatrixXd input, z1, h1, z2, h2, out;
};

struct HeadGradients {
    TriangleHeadParams params;
    Eigen::MatrixXd input;
};

/// Plain pass through a head-shaped MLP: two ReLU layers, linear output.
HeadCache mlp_forward(const Eigen::MatrixXd& input, const TriangleHeadParams& params);
/// Reverse pass given d loss / d raw outputs.
HeadGradients mlp_backward(const TriangleHeadParams& params, const HeadCache& cache, const Eigen::MatrixXd& grad_out);

struct HeadOutput {
    Eigen::VectorXd opacity;  ///< sigmoid of the first output column
    Eigen::MatrixXd sh;       ///< P x 3 d_h raw coefficients
    HeadCache cache;
};

HeadOutput decode_vertices(const Eigen::MatrixXd& fused, const TriangleHeadParams& params, int d_h);

/// Reverse-mode pass through the head given d loss / d opacity and d loss / d sh.
HeadGradients decode_vertices_backward(const TriangleHeadParams& params, const HeadCache& cache,
                                       const Eigen::VectorXd& grad_opacity, const Eigen::MatrixXd& grad_sh);

/// Back-projects every low-resolution pixel center of every view with its
/// regressed depth and attaches the decoded attributes. `opacity` has one
/// entry per vertex; `sh` is (N x 3 d_h) in vertex order.
TriangleSurface assemble_surface(std::span<const DepthMap> depthmaps, std::span<const Camera> cams,
                                 std::span<const double> opacity, const Eigen::MatrixXd& sh, int d_h);

PointCloud surface_to_cloud(const TriangleSurface& surf);

}  // namespace trisplat
