#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "test_util.hpp"
#include "trisplat/error.hpp"
#include "trisplat/parallel.hpp"
#include "trisplat/raster.hpp"
#include "trisplat/sh.hpp"

using namespace trisplat;
using testutil::uniform;

namespace {

double max_abs_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

/// Large triangle at depth z covering the whole 16x16 view of simple_camera(16, 16, 20).
TriangleSurface screen_triangle(double z, double opacity, const Rgb& rgb) {
    return testutil::triangle(Vec3(-10, -10, z), Vec3(30, -10, z), Vec3(-10, 30, z), opacity, rgb);
}

}  // namespace

TEST_CASE("eval_sh") {
    std::vector<double> c(3, 0.0);
    const ShColor zero = eval_sh(c, 1, Vec3(0, 0, 1));
    for (double v : zero.rgb) CHECK(v == 0.5);

    std::fill(c.begin(), c.end(), 0.5 / 0.2820947918);
    for (double v : eval_sh(c, 1, Vec3(0, 0, 1)).rgb) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    SUBCASE("odd degree-1 basis flips with the direction") {
        std::mt19937_64 rng(1);
        for (int i = 0; i < 20; ++i) {
            const Vec3 d = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)).normalized();
            std::array<double, 4> a{}, b{};
            sh_basis(d, 4, a);
            sh_basis(-d, 4, b);
            CHECK(a[0] == b[0]);
            for (int k = 1; k < 4; ++k) CHECK(a[k] == doctest::Approx(-b[k]).epsilon(1e-15));
            std::array<double, 9> a9{}, b9{};
            sh_basis(d, 9, a9);
            sh_basis(-d, 9, b9);
            for (int k = 4; k < 9; ++k) CHECK(a9[k] == doctest::Approx(b9[k]).epsilon(1e-15));
        }
    }
    SUBCASE("clamping is recorded") {
        std::vector<double> big{5.0, 0.0, -5.0};
        const ShColor col = eval_sh(big, 1, Vec3(1, 0, 0));
        CHECK(col.rgb[0] == 1.0);
        CHECK(col.rgb[2] == 0.0);
        CHECK(col.clamped[0]);
        CHECK_FALSE(col.clamped[1]);
        CHECK(col.clamped[2]);
    }
    SUBCASE("non-unit direction") {
        bool threw = false;
        try {
            eval_sh(c, 1, Vec3(0, 0, 1.01));
        } catch (const Error& e) {
            threw = e.code() == ErrorCode::NonUnitDirection;
        }
        CHECK(threw);
    }
    SUBCASE("sh_from_rgb round trip") {
        std::vector<double> coeffs(27);
        sh_from_rgb({0.1, 0.5, 0.8}, 9, coeffs);
        const ShColor col = eval_sh(coeffs, 9, Vec3(0.6, 0, 0.8));
        CHECK(col.rgb[0] == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(col.rgb[1] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(col.rgb[2] == doctest::Approx(0.8).epsilon(1e-12));
    }
}

TEST_CASE("sh_basis_grad matches central differences") {
    std::mt19937_64 rng(3);
    for (int d_h : {4, 9}) {
        for (int t = 0; t < 10; ++t) {
            const Vec3 d(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
            std::vector<Vec3> g(d_h);
            sh_basis_grad(d, d_h, g);
            for (int axis = 0; axis < 3; ++axis) {
                Vec3 up = d, dn = d;
                up(axis) += 1e-6;
                dn(axis) -= 1e-6;
                std::vector<double> bu(d_h), bd(d_h);
                sh_basis(up, d_h, bu);
                sh_basis(dn, d_h, bd);
                for (int k = 0; k < d_h; ++k) CHECK(g[k](axis) == doctest::Approx((bu[k] - bd[k]) / 2e-6).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("compositing closed forms") {
    const Camera cam = testutil::simple_camera(16, 16, 20);
    SUBCASE("opaque white triangle over black") {
        const RenderOutput out = rasterize(screen_triangle(2, 1.0, {1, 1, 1}), cam, {0, 0, 0});
        for (double v : out.color.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("two fragments") {
        TriangleSurface s = screen_triangle(2, 0.6, {1, 1, 1});
        testutil::append(s, screen_triangle(3, 0.5, {0, 0, 0}));
        const RenderOutput out = rasterize(s, cam, {0, 0, 0});
        for (double v : out.color.data) CHECK(v == doctest::Approx(0.6).epsilon(1e-12));
        CHECK(out.fragment_count(5, 5) == 2);
        CHECK(out.depth.at(5, 5) == doctest::Approx(0.6 * 2 + 0.4 * 0.5 * 3).epsilon(1e-12));
    }
    SUBCASE("half-transparent gray over a gray background") {
        const RenderOutput out = rasterize(screen_triangle(2, 0.5, {0.7, 0.7, 0.7}), cam, {0.2, 0.2, 0.2});
        for (double v : out.color.data) CHECK(v == doctest::Approx(0.5 * 0.7 + 0.5 * 0.2).epsilon(1e-12));
    }
    SUBCASE("opacity 0 shows the background exactly, opacity 1 hides everything behind") {
        TriangleSurface s = screen_triangle(2, 0.0, {0.3, 0.9, 0.1});
        const RenderOutput clear = rasterize(s, cam, {0.25, 0.5, 0.75});
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                CHECK(clear.color.at(x, y, 0) == 0.25);
                CHECK(clear.color.at(x, y, 1) == 0.5);
                CHECK(clear.color.at(x, y, 2) == 0.75);
            }
        }
        TriangleSurface front = screen_triangle(2, 1.0, {0.4, 0.4, 0.4});
        testutil::append(front, screen_triangle(3, 1.0, {1, 0, 0}));
        const RenderOutput out = rasterize(front, cam, {1, 1, 1});
        // interpolated opacity is 1 up to rounding of the barycentric sum;
        // where it is exactly 1 the output must be exactly the fragment color
        int exact = 0;
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                const Fragment& f = out.fragments[out.offsets[y * 16 + x]];
                for (int ch = 0; ch < 3; ++ch) {
                    if (f.alpha == 1.0) {
                        CHECK(out.color.at(x, y, ch) == f.rgb[ch]);
                    } else {
                        CHECK(out.color.at(x, y, ch) == doctest::Approx(f.rgb[ch]).epsilon(1e-12));
                    }
                }
                exact += f.alpha == 1.0;
            }
        }
        CHECK(exact > 0);
        CHECK(out.fragment_count(3, 3) == 2);  // the hidden fragment is kept, with zero weight
    }
}

TEST_CASE("top-left rule: a split quad covers every pixel once") {
    const Camera cam = testutil::simple_camera(32, 32, 32);
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const double z = uniform(rng, 1.5, 3);
        const Vec3 a(uniform(rng, -0.6, -0.3) * z, uniform(rng, -0.6, -0.3) * z, z);
        const Vec3 b(uniform(rng, 0.3, 0.6) * z, uniform(rng, -0.6, -0.3) * z, z);
        const Vec3 c(uniform(rng, 0.3, 0.6) * z, uniform(rng, 0.3, 0.6) * z, z);
        const Vec3 d(uniform(rng, -0.6, -0.3) * z, uniform(rng, 0.3, 0.6) * z, z);
        TriangleSurface s = testutil::triangle(a, b, c, 0.5, {1, 1, 1});
        testutil::append(s, testutil::triangle(a, c, d, 0.5, {1, 1, 1}));
        const RenderOutput out = rasterize(s, cam, {0, 0, 0});
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 32; ++x) CHECK(out.fragment_count(x, y) <= 1);
        }
    }
}

TEST_CASE("rasterize equals the brute-force reference") {
    std::mt19937_64 rng(21);
    SUBCASE("empty surface") {
        const Camera cam = testutil::random_camera(rng);
        TriangleSurface empty;
        const Image ref = reference_render(empty, cam, {0.1, 0.2, 0.3});
        const RenderOutput out = rasterize(empty, cam, {0.1, 0.2, 0.3});
        CHECK(max_abs_diff(ref, out.color) == 0.0);
        for (int i = 0; i < 3; ++i) CHECK(ref.data[i] == doctest::Approx(0.1 * (i + 1)));
    }
    SUBCASE("random scenes") {
        for (int t = 0; t < 30; ++t) {
            const Camera cam = testutil::random_camera(rng);
            const int d_h = t % 3 == 0 ? 1 : (t % 3 == 1 ? 4 : 9);
            const TriangleSurface s = testutil::random_triangles(rng, 1 + static_cast<int>(rng() % 50), d_h);
            const Rgb bg{uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)};
            CHECK(max_abs_diff(reference_render(s, cam, bg), rasterize(s, cam, bg).color) <= 1e-6);
        }
    }
}

TEST_CASE("fragment lists are sorted and transmittance never increases") {
    std::mt19937_64 rng(31);
    const Camera cam = testutil::random_camera(rng);
    const TriangleSurface s = testutil::random_triangles(rng, 40, 1);
    const RenderOutput out = rasterize(s, cam, {0, 0, 0});
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * 64 + x;
            double T = 1.0;
            for (std::uint32_t k = out.offsets[p]; k < out.offsets[p + 1]; ++k) {
                const Fragment& f = out.fragments[k];
                if (k > out.offsets[p]) CHECK(out.fragments[k - 1].depth <= f.depth);
                CHECK(f.weights[0] + f.weights[1] + f.weights[2] == doctest::Approx(1.0).epsilon(1e-6));
                for (double w : f.weights) CHECK(w >= -1e-12);
                const double next = T * (1.0 - f.alpha);
                CHECK(next <= T);
                CHECK(next >= 0.0);
                T = next;
            }
        }
    }
}

TEST_CASE("rendering ignores the order of the face array") {
    std::mt19937_64 rng(41);
    const Camera cam = testutil::random_camera(rng);
    TriangleSurface s = testutil::random_triangles(rng, 30, 4);
    const Image a = rasterize(s, cam, {0.5, 0.5, 0.5}).color;
    std::shuffle(s.faces.begin(), s.faces.end(), rng);
    const Image b = rasterize(s, cam, {0.5, 0.5, 0.5}).color;
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("rasterize_backward closed forms") {
    const Camera cam = testutil::simple_camera(16, 16, 20);
    SUBCASE("single opaque triangle: dC/dopacity = weight * (color - bg)") {
        const TriangleSurface s = screen_triangle(2, 1.0, {0.8, 0.3, 0.6});
        const Rgb bg{0.1, 0.2, 0.9};
        const RenderOutput out = rasterize(s, cam, bg);
        const int px = 6, py = 9;
        for (int c = 0; c < 3; ++c) {
            Image gc(16, 16);
            gc.at(px, py, c) = 1.0;
            const SurfaceGradients g = rasterize_backward(out, s, cam, gc, ScalarMap(16, 16));
            const Fragment& f = out.fragments[out.offsets[py * 16 + px]];
            for (int k = 0; k < 3; ++k) {
                CHECK(g.opacity[k] == doctest::Approx(f.weights[k] * (f.rgb[c] - bg[c])).epsilon(1e-12));
            }
        }
    }
    SUBCASE("transparent fragment gets no color gradient") {
        TriangleSurface s = screen_triangle(2, 0.0, {0.8, 0.3, 0.6});
        const RenderOutput out = rasterize(s, cam, {0, 0, 0});
        Image gc(16, 16, 1.0);
        const SurfaceGradients g = rasterize_backward(out, s, cam, gc, ScalarMap(16, 16));
        for (double v : g.sh) CHECK(v == 0.0);
    }
    SUBCASE("stale cache") {
        TriangleSurface s = screen_triangle(2, 0.5, {0.8, 0.3, 0.6});
        const RenderOutput out = rasterize(s, cam, {0, 0, 0});
        s.opacity[1] = 0.25;
        bool threw = false;
        try {
            rasterize_backward(out, s, cam, Image(16, 16, 1.0), ScalarMap(16, 16));
        } catch (const Error& e) {
            threw = e.code() == ErrorCode::StaleFragmentCache;
        }
        CHECK(threw);
    }
}

TEST_CASE("forward and backward do not depend on the thread count") {
    std::mt19937_64 rng(51);
    const Camera cam = testutil::random_camera(rng);
    const TriangleSurface s = testutil::random_triangles(rng, 50, 4);
    Image gc(64, 64);
    for (double& v : gc.data) v = uniform(rng, -1, 1);
    ScalarMap gd(64, 64);
    for (double& v : gd.data) v = uniform(rng, -1, 1);
    auto run = [&](unsigned threads) {
        set_num_threads(threads);
        const RenderOutput out = rasterize(s, cam, {0.2, 0.2, 0.2});
        return std::pair{out.color.data, rasterize_backward(out, s, cam, gc, gd)};
    };
    const auto [c1, g1] = run(1);
    const auto [c4, g4] = run(4);
    set_num_threads(0);
    CHECK(c1 == c4);
    CHECK(g1.opacity == g4.opacity);
    CHECK(g1.sh == g4.sh);
    CHECK(g1.vertices == g4.vertices);
}
