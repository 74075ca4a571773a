#include "trisplat/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "raster_internal.hpp"
#include "trisplat/error.hpp"
#include "trisplat/parallel.hpp"
#include "trisplat/sh.hpp"

namespace trisplat {

namespace detail {

std::vector<ScreenVertex> project_vertices(const TriangleSurface& surf, const Camera& cam) {
    const auto& k = cam.intrinsics;
    std::vector<ScreenVertex> sv(surf.num_vertices());
    for (std::size_t i = 0; i < sv.size(); ++i) {
        ScreenVertex& v = sv[i];
        v.pc = cam.to_camera(surf.vertices[i]);
        v.in_front = v.pc.z() > kNearCull;
        if (v.in_front) {
            v.xy = Vec2(k.fx * v.pc.x() / v.pc.z() + k.cx, k.fy * v.pc.y() / v.pc.z() + k.cy);
        }
    }
    return sv;
}

std::vector<VertexShade> shade_vertices(const TriangleSurface& surf, const Camera& cam,
                                        const std::vector<ScreenVertex>& sv) {
    const Vec3 center = cam.center();
    std::vector<VertexShade> shade(surf.num_vertices());
    for (std::size_t i = 0; i < shade.size(); ++i) {
        if (!sv[i].in_front) continue;
        VertexShade& s = shade[i];
        const Vec3 u = center - surf.vertices[i];
        s.dist = u.norm();
        s.dir = u / s.dist;
        const ShColor c = eval_sh(surf.sh_of(i), surf.sh_size, s.dir);
        s.rgb = c.rgb;
        s.clamped = c.clamped;
    }
    return shade;
}

double edge_value(const Vec2& a, const Vec2& b, double px, double py) {
    const bool ordered = a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    const Vec2& lo = ordered ? a : b;
    const Vec2& hi = ordered ? b : a;
    const double v = (hi.x() - lo.x()) * (py - lo.y()) - (hi.y() - lo.y()) * (px - lo.x());
    return ordered ? v : -v;
}

FaceSetup setup_face(const TriangleSurface& surf, std::size_t face, const std::vector<ScreenVertex>& sv,
                     int width, int height) {
    FaceSetup fs;
    const Face& f = surf.faces[face];
    for (int k = 0; k < 3; ++k) {
        const ScreenVertex& v = sv[f[k]];
        if (!v.in_front) return fs;
        fs.idx[k] = f[k];
        fs.p[k] = v.xy;
        fs.z[k] = v.pc.z();
    }
    const double area = edge_value(fs.p[1], fs.p[2], fs.p[0].x(), fs.p[0].y());
    if (area == 0.0 || !std::isfinite(area)) return fs;
    fs.orient = area > 0.0 ? 1.0 : -1.0;

    const double min_x = std::min({fs.p[0].x(), fs.p[1].x(), fs.p[2].x()});
    const double max_x = std::max({fs.p[0].x(), fs.p[1].x(), fs.p[2].x()});
    const double min_y = std::min({fs.p[0].y(), fs.p[1].y(), fs.p[2].y()});
    const double max_y = std::max({fs.p[0].y(), fs.p[1].y(), fs.p[2].y()});
    fs.x0 = static_cast<int>(std::ceil(std::clamp(min_x, -1.0, static_cast<double>(width))));
    fs.x1 = static_cast<int>(std::floor(std::clamp(max_x, -1.0, static_cast<double>(width))));
    fs.y0 = static_cast<int>(std::ceil(std::clamp(min_y, -1.0, static_cast<double>(height))));
    fs.y1 = static_cast<int>(std::floor(std::clamp(max_y, -1.0, static_cast<double>(height))));
    fs.x0 = std::max(fs.x0, 0);
    fs.y0 = std::max(fs.y0, 0);
    fs.x1 = std::min(fs.x1, width - 1);
    fs.y1 = std::min(fs.y1, height - 1);
    fs.active = fs.x0 <= fs.x1 && fs.y0 <= fs.y1;
    return fs;
}

bool covers(const FaceSetup& fs, int px, int py, std::array<double, 3>& e) {
    for (int k = 0; k < 3; ++k) {
        const Vec2& a = fs.p[(k + 1) % 3];
        const Vec2& b = fs.p[(k + 2) % 3];
        e[k] = fs.orient * edge_value(a, b, px, py);
        if (e[k] > 0.0) continue;
        if (e[k] < 0.0) return false;
        // On the edge: accept only top or left edges. Interior normal n.
        const double nx = -fs.orient * (b.y() - a.y());
        const double ny = fs.orient * (b.x() - a.x());
        if (!(nx > 0.0 || (nx == 0.0 && ny > 0.0))) return false;
    }
    return true;
}

Fragment make_fragment(const FaceSetup& fs, std::int32_t face, const std::array<double, 3>& e,
                       const TriangleSurface& surf, const std::vector<VertexShade>& shade) {
    const double s = e[0] + e[1] + e[2];
    const double q0 = e[0] / fs.z[0];
    const double q1 = e[1] / fs.z[1];
    const double q2 = e[2] / fs.z[2];
    const double q = q0 + q1 + q2;

    Fragment frag;
    frag.face = face;
    frag.weights = {q0 / q, q1 / q, q2 / q};
    frag.depth = s / q;
    frag.alpha = 0.0;
    frag.rgb = {0.0, 0.0, 0.0};
    for (int k = 0; k < 3; ++k) {
        const double w = frag.weights[k];
        frag.alpha += w * surf.opacity[fs.idx[k]];
        const Rgb& c = shade[fs.idx[k]].rgb;
        for (int ch = 0; ch < 3; ++ch) frag.rgb[ch] += w * c[ch];
    }
    return frag;
}

}  // namespace detail

namespace {

using namespace detail;

void check_inputs(const TriangleSurface& surf, const Camera& cam) {
    surf.validate();
    cam.validate();
}

// Composites a sorted fragment list front to back over every fragment.
void composite(const std::vector<Fragment>& frags, const Rgb& bg, double* rgb_out, double& depth_out) {
    double t = 1.0;
    double r = 0.0, g = 0.0, b = 0.0, d = 0.0;
    for (const Fragment& f : frags) {
        const double w = f.alpha * t;
        r += w * f.rgb[0];
        g += w * f.rgb[1];
        b += w * f.rgb[2];
        d += w * f.depth;
        t *= 1.0 - f.alpha;
    }
    rgb_out[0] = r + t * bg[0];
    rgb_out[1] = g + t * bg[1];
    rgb_out[2] = b + t * bg[2];
    depth_out = d;
}

void hash_bytes(std::uint64_t& h, const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
}

}  // namespace

std::uint64_t render_fingerprint(const TriangleSurface& surf, const Camera& cam, const Rgb& bg) {
    std::uint64_t h = 1469598103934665603ull;
    for (const Vec3& v : surf.vertices) hash_bytes(h, v.data(), 3 * sizeof(double));
    hash_bytes(h, surf.opacity.data(), surf.opacity.size() * sizeof(double));
    hash_bytes(h, surf.sh.data(), surf.sh.size() * sizeof(double));
    hash_bytes(h, surf.faces.data(), surf.faces.size() * sizeof(Face));
    hash_bytes(h, &surf.sh_size, sizeof(surf.sh_size));
    const auto& k = cam.intrinsics;
    const double intr[4] = {k.fx, k.fy, k.cx, k.cy};
    hash_bytes(h, intr, sizeof(intr));
    hash_bytes(h, &k.width, sizeof(k.width));
    hash_bytes(h, &k.height, sizeof(k.height));
    hash_bytes(h, cam.pose.R.data(), 9 * sizeof(double));
    hash_bytes(h, cam.pose.t.data(), 3 * sizeof(double));
    hash_bytes(h, bg.data(), sizeof(bg));
    return h;
}

RenderOutput rasterize(const TriangleSurface& surf, const Camera& cam, const Rgb& bg) {
    check_inputs(surf, cam);
    const int width = cam.intrinsics.width;
    const int height = cam.intrinsics.height;

    const auto sv = project_vertices(surf, cam);
    const auto shade = shade_vertices(surf, cam, sv);

    std::vector<FaceSetup> setups(surf.num_faces());
    const int tiles_x = (width + kTileSize - 1) / kTileSize;
    const int tiles_y = (height + kTileSize - 1) / kTileSize;
    std::vector<std::vector<std::int32_t>> bins(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (std::size_t f = 0; f < setups.size(); ++f) {
        setups[f] = setup_face(surf, f, sv, width, height);
        const FaceSetup& fs = setups[f];
        if (!fs.active) continue;
        for (int ty = fs.y0 / kTileSize; ty <= fs.y1 / kTileSize; ++ty) {
            for (int tx = fs.x0 / kTileSize; tx <= fs.x1 / kTileSize; ++tx) {
                bins[ty * tiles_x + tx].push_back(static_cast<std::int32_t>(f));
            }
        }
    }

    RenderOutput out;
    out.color = Image(width, height);
    out.depth = ScalarMap(width, height);
    out.background = bg;
    out.fingerprint = render_fingerprint(surf, cam, bg);

    // per-tile, per-local-pixel composited fragment lists
    std::vector<std::vector<std::vector<Fragment>>> tile_frags(bins.size());
    parallel_for(bins.size(), [&](std::size_t t) {
        const int tx0 = static_cast<int>(t % tiles_x) * kTileSize;
        const int ty0 = static_cast<int>(t / tiles_x) * kTileSize;
        const int tx1 = std::min(tx0 + kTileSize, width) - 1;
        const int ty1 = std::min(ty0 + kTileSize, height) - 1;
        const int tw = tx1 - tx0 + 1;
        auto& local = tile_frags[t];
        local.assign(static_cast<std::size_t>(tw) * (ty1 - ty0 + 1), {});

        std::array<double, 3> e{};
        for (std::int32_t f : bins[t]) {
            const FaceSetup& fs = setups[f];
            for (int y = std::max(fs.y0, ty0); y <= std::min(fs.y1, ty1); ++y) {
                for (int x = std::max(fs.x0, tx0); x <= std::min(fs.x1, tx1); ++x) {
                    if (covers(fs, x, y, e)) {
                        local[(y - ty0) * tw + (x - tx0)].push_back(make_fragment(fs, f, e, surf, shade));
                    }
                }
            }
        }
        for (int y = ty0; y <= ty1; ++y) {
            for (int x = tx0; x <= tx1; ++x) {
                auto& frags = local[(y - ty0) * tw + (x - tx0)];
                std::sort(frags.begin(), frags.end(), fragment_less);
                double rgb[3];
                composite(frags, bg, rgb, out.depth.at(x, y));
                for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = rgb[c];
            }
        }
    });

    out.offsets.assign(static_cast<std::size_t>(width) * height + 1, 0);
    std::size_t total = 0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t t = static_cast<std::size_t>(y / kTileSize) * tiles_x + x / kTileSize;
            const int tw = std::min((x / kTileSize + 1) * kTileSize, width) - (x / kTileSize) * kTileSize;
            total += tile_frags[t][(y % kTileSize) * tw + (x % kTileSize)].size();
            out.offsets[static_cast<std::size_t>(y) * width + x + 1] = static_cast<std::uint32_t>(total);
        }
    }
    out.fragments.reserve(total);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t t = static_cast<std::size_t>(y / kTileSize) * tiles_x + x / kTileSize;
            const int tw = std::min((x / kTileSize + 1) * kTileSize, width) - (x / kTileSize) * kTileSize;
            const auto& frags = tile_frags[t][(y % kTileSize) * tw + (x % kTileSize)];
            out.fragments.insert(out.fragments.end(), frags.begin(), frags.end());
        }
    }
    return out;
}

ReferenceRender reference_render_with_depth(const TriangleSurface& surf, const Camera& cam, const Rgb& bg) {
    check_inputs(surf, cam);
    const int width = cam.intrinsics.width;
    const int height = cam.intrinsics.height;
    const auto sv = project_vertices(surf, cam);
    const auto shade = shade_vertices(surf, cam, sv);
    std::vector<FaceSetup> setups(surf.num_faces());
    for (std::size_t f = 0; f < setups.size(); ++f) setups[f] = setup_face(surf, f, sv, width, height);

    ReferenceRender out{Image(width, height), ScalarMap(width, height)};
    std::vector<Fragment> frags;
    std::array<double, 3> e{};
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            frags.clear();
            for (std::size_t f = 0; f < setups.size(); ++f) {
                const FaceSetup& fs = setups[f];
                if (!fs.active || x < fs.x0 || x > fs.x1 || y < fs.y0 || y > fs.y1) continue;
                if (covers(fs, x, y, e)) frags.push_back(make_fragment(fs, static_cast<std::int32_t>(f), e, surf, shade));
            }
            std::sort(frags.begin(), frags.end(), fragment_less);

            double transmittance = 1.0;
            double acc[3] = {0.0, 0.0, 0.0};
            double depth = 0.0;
            for (const Fragment& f : frags) {
                const double w = f.alpha * transmittance;
                for (int c = 0; c < 3; ++c) acc[c] += w * f.rgb[c];
                depth += w * f.depth;
                transmittance *= 1.0 - f.alpha;
            }
            for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = acc[c] + transmittance * bg[c];
            out.depth.at(x, y) = depth;
        }
    }
    return out;
}

Image reference_render(const TriangleSurface& surf, const Camera& cam, const Rgb& bg) {
    return reference_render_with_depth(surf, cam, bg).color;
}

SurfaceGradients rasterize_backward(const RenderOutput& out, const TriangleSurface& surf, const Camera& cam,
                                    const Image& grad_color, const ScalarMap& grad_depth) {
    if (render_fingerprint(surf, cam, out.background) != out.fingerprint) {
        fail(ErrorCode::StaleFragmentCache, "surface or camera changed since the forward pass");
    }
    const int width = out.color.width;
    const int height = out.color.height;
    if (!grad_color.same_shape(out.color) || grad_depth.width != width || grad_depth.height != height) {
        fail(ErrorCode::ShapeMismatch, "gradient image does not match the render");
    }

    const std::size_t n = surf.num_vertices();
    const auto sv = project_vertices(surf, cam);
    const auto shade = shade_vertices(surf, cam, sv);
    std::vector<FaceSetup> setups(surf.num_faces());
    for (std::size_t f = 0; f < setups.size(); ++f) setups[f] = setup_face(surf, f, sv, width, height);

    // Per-tile partial sums of d/d(vertex opacity, color, screen xy, camera z),
    // reduced afterwards in tile order.
    struct Partial {
        std::vector<double> opacity, color, xy, z;
    };
    const int tiles_x = (width + kTileSize - 1) / kTileSize;
    const int tiles_y = (height + kTileSize - 1) / kTileSize;
    std::vector<Partial> partials(static_cast<std::size_t>(tiles_x) * tiles_y);

    parallel_for(partials.size(), [&](std::size_t t) {
        const int tx0 = static_cast<int>(t % tiles_x) * kTileSize;
        const int ty0 = static_cast<int>(t / tiles_x) * kTileSize;
        const int tx1 = std::min(tx0 + kTileSize, width) - 1;
        const int ty1 = std::min(ty0 + kTileSize, height) - 1;
        Partial& part = partials[t];
        bool touched = false;

        std::vector<double> trans;
        std::array<double, 3> e{};
        for (int y = ty0; y <= ty1; ++y) {
            for (int x = tx0; x <= tx1; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * width + x;
                const std::size_t begin = out.offsets[p];
                const std::size_t m = out.offsets[p + 1] - begin;
                if (m == 0) continue;
                const double gc[3] = {grad_color.at(x, y, 0), grad_color.at(x, y, 1), grad_color.at(x, y, 2)};
                const double gd = grad_depth.at(x, y);
                if (gc[0] == 0.0 && gc[1] == 0.0 && gc[2] == 0.0 && gd == 0.0) continue;
                if (!touched) {
                    part.opacity.assign(n, 0.0);
                    part.color.assign(3 * n, 0.0);
                    part.xy.assign(2 * n, 0.0);
                    part.z.assign(n, 0.0);
                    touched = true;
                }

                trans.resize(m);
                double t_acc = 1.0;
                for (std::size_t i = 0; i < m; ++i) {
                    trans[i] = t_acc;
                    t_acc *= 1.0 - out.fragments[begin + i].alpha;
                }

                double rest[3] = {out.background[0], out.background[1], out.background[2]};
                double rest_depth = 0.0;
                for (std::size_t ii = m; ii-- > 0;) {
                    const Fragment& fr = out.fragments[begin + ii];
                    const double ti = trans[ii];
                    double d_alpha = gd * (fr.depth - rest_depth);
                    double d_rgb[3];
                    for (int c = 0; c < 3; ++c) {
                        d_alpha += gc[c] * (fr.rgb[c] - rest[c]);
                        d_rgb[c] = gc[c] * fr.alpha * ti;
                    }
                    d_alpha *= ti;
                    const double d_depth = gd * fr.alpha * ti;
                    for (int c = 0; c < 3; ++c) rest[c] = fr.rgb[c] * fr.alpha + (1.0 - fr.alpha) * rest[c];
                    rest_depth = fr.depth * fr.alpha + (1.0 - fr.alpha) * rest_depth;

                    const FaceSetup& fs = setups[fr.face];
                    covers(fs, x, y, e);
                    const double q_k[3] = {e[0] / fs.z[0], e[1] / fs.z[1], e[2] / fs.z[2]};
                    const double q = q_k[0] + q_k[1] + q_k[2];

                    double d_lambda[3];
                    double weighted = 0.0;
                    for (int k = 0; k < 3; ++k) {
                        const std::int32_t vi = fs.idx[k];
                        const double lam = fr.weights[k];
                        d_lambda[k] = surf.opacity[vi] * d_alpha;
                        for (int c = 0; c < 3; ++c) {
                            d_lambda[k] += shade[vi].rgb[c] * d_rgb[c];
                            part.color[3 * vi + c] += lam * d_rgb[c];
                        }
                        part.opacity[vi] += lam * d_alpha;
                        weighted += d_lambda[k] * lam;
                    }

                    const double d_sum = d_depth / q;
                    for (int k = 0; k < 3; ++k) {
                        const std::int32_t vi = fs.idx[k];
                        const double d_q = (d_lambda[k] - weighted) / q - d_depth * fr.depth / q;
                        const double d_e = (d_sum + d_q / fs.z[k]) * fs.orient;
                        part.z[vi] -= d_q * q_k[k] / fs.z[k];

                        // e_k = (b - a) x (p - a) with a, b the other two vertices
                        const int ka = (k + 1) % 3;
                        const int kb = (k + 2) % 3;
                        const Vec2& a = fs.p[ka];
                        const Vec2& b = fs.p[kb];
                        part.xy[2 * fs.idx[ka]] += d_e * (b.y() - y);
                        part.xy[2 * fs.idx[ka] + 1] += d_e * (x - b.x());
                        part.xy[2 * fs.idx[kb]] += d_e * (y - a.y());
                        part.xy[2 * fs.idx[kb] + 1] += d_e * (a.x() - x);
                    }
                }
            }
        }
    });

    std::vector<double> g_opacity(n, 0.0), g_color(3 * n, 0.0), g_xy(2 * n, 0.0), g_z(n, 0.0);
    for (const Partial& part : partials) {
        if (part.opacity.empty()) continue;
        for (std::size_t i = 0; i < n; ++i) {
            g_opacity[i] += part.opacity[i];
            g_z[i] += part.z[i];
        }
        for (std::size_t i = 0; i < 2 * n; ++i) g_xy[i] += part.xy[i];
        for (std::size_t i = 0; i < 3 * n; ++i) g_color[i] += part.color[i];
    }

    SurfaceGradients grads;
    grads.opacity = std::move(g_opacity);
    grads.sh.assign(surf.sh.size(), 0.0);
    grads.vertices.assign(n, Vec3::Zero());

    const int dh = surf.sh_size;
    const auto& k = cam.intrinsics;
    const Mat3 rt = cam.pose.R.transpose();
    double basis[9];
    Vec3 basis_grad[9];
    for (std::size_t i = 0; i < n; ++i) {
        if (!sv[i].in_front) continue;
        const Vec3& pc = sv[i].pc;
        const double gx = g_xy[2 * i];
        const double gy = g_xy[2 * i + 1];
        const double inv_z = 1.0 / pc.z();
        const Vec3 d_pc(gx * k.fx * inv_z, gy * k.fy * inv_z,
                        g_z[i] - (gx * k.fx * pc.x() + gy * k.fy * pc.y()) * inv_z * inv_z);
        Vec3 d_vertex = rt * d_pc;

        const VertexShade& s = shade[i];
        sh_basis(s.dir, dh, basis);
        if (dh > 1) sh_basis_grad(s.dir, dh, basis_grad);
        Vec3 d_dir = Vec3::Zero();
        const auto coeffs = surf.sh_of(i);
        for (int c = 0; c < 3; ++c) {
            const double gcol = g_color[3 * i + c];
            if (s.clamped[c] || gcol == 0.0) continue;
            for (int j = 0; j < dh; ++j) {
                grads.sh[(i * 3 + c) * dh + j] = gcol * basis[j];
                if (j > 0) d_dir += gcol * coeffs[c * dh + j] * basis_grad[j];
            }
        }
        if (dh > 1) {
            const Vec3 d_u = (d_dir - s.dir * s.dir.dot(d_dir)) / s.dist;
            d_vertex -= d_u;
        }
        grads.vertices[i] = d_vertex;
    }
    return grads;
}

}  // namespace trisplat
