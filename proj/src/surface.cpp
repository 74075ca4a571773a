#include "trisplat/surface.hpp"

#include <cmath>
#include <random>
#include <string>

#include "trisplat/error.hpp"
#include "trisplat/features.hpp"
#include "trisplat/sh.hpp"

namespace trisplat {

void TriangleSurface::validate() const {
    const std::size_t n = vertices.size();
    require(valid_sh_size(sh_size), ErrorCode::InvalidSurface, "SH size must be 1, 4 or 9");
    require(opacity.size() == n, ErrorCode::InvalidSurface, "one opacity per vertex required");
    require(sh.size() == n * 3 * sh_size, ErrorCode::InvalidSurface, "SH array has the wrong length");
    require(sigma == 0.0, ErrorCode::InvalidSurface, "only sigma = 0 (hard edges) is supported");
    for (std::size_t i = 0; i < n; ++i) {
        require(vertices[i].allFinite(), ErrorCode::InvalidSurface, "non-finite vertex");
        require(opacity[i] >= 0.0 && opacity[i] <= 1.0, ErrorCode::InvalidSurface, "opacity outside [0, 1]");
    }
    for (double c : sh) require(std::isfinite(c), ErrorCode::InvalidSurface, "non-finite SH coefficient");
    for (const Face& f : faces) {
        for (auto idx : f) {
            require(idx >= 0 && static_cast<std::size_t>(idx) < n, ErrorCode::InvalidSurface,
                    "face index out of range");
        }
        require(f[0] != f[1] && f[1] != f[2] && f[0] != f[2], ErrorCode::InvalidSurface, "degenerate face");
    }
}

std::vector<Face> generate_connectivity(int n, int rows, int cols) {
    if (rows < 2 || cols < 2) {
        fail(ErrorCode::DegenerateGrid, "grid " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    require(n >= 1, ErrorCode::InvalidArgument, "need at least one view");

    std::vector<Face> faces;
    faces.reserve(static_cast<std::size_t>(n) * 2 * (rows - 1) * (cols - 1));
    for (int view = 0; view < n; ++view) {
        const std::int32_t base = view * rows * cols;
        auto id = [&](int u, int v) { return base + v * cols + u; };
        for (int v = 0; v < rows; ++v) {
            for (int u = 0; u < cols; ++u) {
                if (u < cols - 1 && v < rows - 1) faces.push_back({id(u, v), id(u + 1, v), id(u, v + 1)});
                if (u > 0 && v > 0) faces.push_back({id(u, v), id(u - 1, v), id(u, v - 1)});
            }
        }
    }
    return faces;
}

TriangleHeadParams TriangleHeadParams::zeros(int in, int hidden, int out) {
    TriangleHeadParams p;
    p.w1 = Eigen::MatrixXd::Zero(in, hidden);
    p.w2 = Eigen::MatrixXd::Zero(hidden, hidden);
    p.w3 = Eigen::MatrixXd::Zero(hidden, out);
    p.b1 = Eigen::RowVectorXd::Zero(hidden);
    p.b2 = Eigen::RowVectorXd::Zero(hidden);
    p.b3 = Eigen::RowVectorXd::Zero(out);
    return p;
}

TriangleHeadParams TriangleHeadParams::random(int in, int hidden, int out, std::uint64_t seed) {
    TriangleHeadParams p = zeros(in, hidden, out);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto he = [&](Eigen::MatrixXd& w) {
        const double scale = std::sqrt(2.0 / static_cast<double>(w.rows()));
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * normal(rng);
        }
    };
    he(p.w1);
    he(p.w2);
    he(p.w3);
    p.w3 *= 0.1;
    return p;
}

std::size_t TriangleHeadParams::parameter_count() const {
    return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size());
}

std::vector<double> TriangleHeadParams::pack() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    auto append = [&](const auto& m) { flat.insert(flat.end(), m.data(), m.data() + m.size()); };
    append(w1);
    append(b1);
    append(w2);
    append(b2);
    append(w3);
    append(b3);
    return flat;
}

void TriangleHeadParams::unpack(std::span<const double> flat) {
    require(flat.size() == parameter_count(), ErrorCode::ShapeMismatch, "flat parameter vector length");
    std::size_t offset = 0;
    auto take = [&](auto& m) {
        std::copy_n(flat.data() + offset, m.size(), m.data());
        offset += static_cast<std::size_t>(m.size());
    };
    take(w1);
    take(b1);
    take(w2);
    take(b2);
    take(w3);
    take(b3);
}

bool TriangleHeadParams::all_finite() const {
    return w1.allFinite() && w2.allFinite() && w3.allFinite() && b1.allFinite() && b2.allFinite() &&
           b3.allFinite();
}

HeadCache mlp_forward(const Eigen::MatrixXd& input, const TriangleHeadParams& params) {
    if (input.cols() != params.input_size()) fail(ErrorCode::ShapeMismatch, "MLP input width");
    HeadCache c;
    c.input = input;
    c.z1 = (input * params.w1).rowwise() + params.b1;
    c.h1 = c.z1.cwiseMax(0.0);
    c.z2 = (c.h1 * params.w2).rowwise() + params.b2;
    c.h2 = c.z2.cwiseMax(0.0);
    c.out = (c.h2 * params.w3).rowwise() + params.b3;
    return c;
}

HeadGradients mlp_backward(const TriangleHeadParams& params, const HeadCache& cache, const Eigen::MatrixXd& grad_out) {
    if (grad_out.rows() != cache.out.rows() || grad_out.cols() != cache.out.cols()) {
        fail(ErrorCode::ShapeMismatch, "MLP output gradient shape");
    }
    HeadGradients g;
    g.params.w3 = cache.h2.transpose() * grad_out;
    g.params.b3 = grad_out.colwise().sum();
    Eigen::MatrixXd g_z2 = (grad_out * params.w3.transpose()).cwiseProduct((cache.z2.array() > 0.0).cast<double>().matrix());
    g.params.w2 = cache.h1.transpose() * g_z2;
    g.params.b2 = g_z2.colwise().sum();
    Eigen::MatrixXd g_z1 = (g_z2 * params.w2.transpose()).cwiseProduct((cache.z1.array() > 0.0).cast<double>().matrix());
    g.params.w1 = cache.input.transpose() * g_z1;
    g.params.b1 = g_z1.colwise().sum();
    g.input = g_z1 * params.w1.transpose();
    return g;
}

HeadOutput decode_vertices(const Eigen::MatrixXd& fused, const TriangleHeadParams& params, int d_h) {
    if (fused.cols() != params.input_size()) fail(ErrorCode::ShapeMismatch, "head input width");
    if (params.output_size() != 1 + 3 * d_h) fail(ErrorCode::ShapeMismatch, "head output width vs SH size");

    HeadOutput out;
    out.cache = mlp_forward(fused, params);
    out.opacity = out.cache.out.col(0).unaryExpr([](double logit) { return 1.0 / (1.0 + std::exp(-logit)); });
    out.sh = out.cache.out.rightCols(3 * d_h);
    return out;
}

HeadGradients decode_vertices_backward(const TriangleHeadParams& params, const HeadCache& cache,
                                       const Eigen::VectorXd& grad_opacity, const Eigen::MatrixXd& grad_sh) {
    const Eigen::Index rows = cache.out.rows();
    if (grad_opacity.size() != rows || grad_sh.rows() != rows || grad_sh.cols() != cache.out.cols() - 1) {
        fail(ErrorCode::ShapeMismatch, "head gradient shape");
    }

    Eigen::MatrixXd g_out(rows, cache.out.cols());
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double o = 1.0 / (1.0 + std::exp(-cache.out(i, 0)));
        g_out(i, 0) = grad_opacity(i) * o * (1.0 - o);
    }
    g_out.rightCols(grad_sh.cols()) = grad_sh;
    return mlp_backward(params, cache, g_out);
}

TriangleSurface assemble_surface(std::span<const DepthMap> depthmaps, std::span<const Camera> cams,
                                 std::span<const double> opacity, const Eigen::MatrixXd& sh, int d_h) {
    require(!depthmaps.empty() && depthmaps.size() == cams.size(), ErrorCode::ShapeMismatch,
            "one camera per depth map required");
    const int rows = depthmaps[0].height;
    const int cols = depthmaps[0].width;
    for (const auto& dm : depthmaps) {
        require(dm.width == cols && dm.height == rows, ErrorCode::ShapeMismatch, "depth maps differ in size");
    }
    const std::size_t n_views = depthmaps.size();
    const std::size_t n = n_views * rows * cols;
    require(opacity.size() == n && static_cast<std::size_t>(sh.rows()) == n && sh.cols() == 3 * d_h,
            ErrorCode::ShapeMismatch, "attribute count does not match the vertex grid");

    TriangleSurface surf;
    surf.sh_size = d_h;
    surf.vertices.reserve(n);
    surf.opacity.assign(opacity.begin(), opacity.end());
    surf.sh.resize(n * 3 * d_h);
    for (std::size_t view = 0; view < n_views; ++view) {
        const Camera& cam = cams[view];
        require(cam.intrinsics.width % cols == 0 && cam.intrinsics.height % rows == 0 &&
                    cam.intrinsics.width / cols == cam.intrinsics.height / rows,
                ErrorCode::ShapeMismatch, "depth map is not an integer downsample of the camera image");
        const int s = cam.intrinsics.width / cols;
        for (int v = 0; v < rows; ++v) {
            for (int u = 0; u < cols; ++u) {
                surf.vertices.push_back(back_project(cam, block_center(u, v, s), depthmaps[view].at(u, v)));
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (int j = 0; j < 3 * d_h; ++j) surf.sh[i * 3 * d_h + j] = sh(static_cast<Eigen::Index>(i), j);
    }
    surf.faces = generate_connectivity(static_cast<int>(n_views), rows, cols);
    return surf;
}

PointCloud surface_to_cloud(const TriangleSurface& surf) { return surf.vertices; }

}  // namespace trisplat
