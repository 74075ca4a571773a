#include "trisplat/harness.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include <nlohmann/json.hpp>

#include "trisplat/error.hpp"
#include "trisplat/features.hpp"
#include "trisplat/losses.hpp"
#include "trisplat/parallel.hpp"
#include "trisplat/raster.hpp"
#include "trisplat/sh.hpp"

namespace trisplat {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

double lattice_value(std::int64_t ix, std::int64_t iy, std::int64_t iz, std::uint64_t seed) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(ix));
    h = splitmix64(h ^ static_cast<std::uint64_t>(iy));
    h = splitmix64(h ^ static_cast<std::uint64_t>(iz));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(const Vec3& p, double cell, std::uint64_t seed) {
    const Vec3 q = p / cell;
    const Vec3 f(std::floor(q.x()), std::floor(q.y()), std::floor(q.z()));
    Vec3 t = q - f;
    t = t.unaryExpr([](double a) { return a * a * (3.0 - 2.0 * a); });
    const auto ix = static_cast<std::int64_t>(f.x());
    const auto iy = static_cast<std::int64_t>(f.y());
    const auto iz = static_cast<std::int64_t>(f.z());
    double acc = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
        const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
        const double w = (dx ? t.x() : 1.0 - t.x()) * (dy ? t.y() : 1.0 - t.y()) * (dz ? t.z() : 1.0 - t.z());
        acc += w * lattice_value(ix + dx, iy + dy, iz + dz, seed);
    }
    return acc;
}

Rgb texture_color(const TextureSpec& tex, const Vec3& p) {
    std::array<double, 3> mix{};
    switch (tex.kind) {
        case TextureSpec::Kind::Solid:
            break;
        case TextureSpec::Kind::Checker: {
            // nudge so that lattice-aligned vertices fall consistently into one cell
            const Vec3 q = (p / tex.cell).array() + 1e-7;
            const auto parity = static_cast<std::int64_t>(std::floor(q.x())) +
                                static_cast<std::int64_t>(std::floor(q.y())) +
                                static_cast<std::int64_t>(std::floor(q.z()));
            mix.fill((parity % 2 == 0) ? 0.0 : 1.0);
            break;
        }
        case TextureSpec::Kind::Noise:
            // independent field per channel, contrast-stretched so both endpoints appear
            for (int k = 0; k < 3; ++k) {
                const double n = value_noise(p, tex.cell, tex.seed + 7919u * k);
                mix[k] = std::clamp(0.5 + 2.5 * (n - 0.5), 0.0, 1.0);
            }
            break;
    }
    Rgb c;
    for (int k = 0; k < 3; ++k) {
        const double v = (1.0 - mix[k]) * tex.color_a[k] + mix[k] * tex.color_b[k];
        c[k] = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    }
    return c;
}

void append_grid(TriangleSurface& mesh, const Vec3& center, const Vec3& au, const Vec3& av, int tess,
                 const TextureSpec& tex) {
    require(tess >= 1, ErrorCode::InvalidArgument, "tessellation must be >= 1");
    const auto base = static_cast<std::int32_t>(mesh.vertices.size());
    for (int j = 0; j <= tess; ++j) {
        for (int i = 0; i <= tess; ++i) {
            const double a = 2.0 * i / tess - 1.0;
            const double b = 2.0 * j / tess - 1.0;
            const Vec3 p = round_to_float(center + a * au + b * av);
            mesh.vertices.push_back(p);
            mesh.opacity.push_back(1.0);
            double coeffs[3];
            sh_from_rgb(texture_color(tex, p), 1, coeffs);
            mesh.sh.insert(mesh.sh.end(), coeffs, coeffs + 3);
        }
    }
    const int row = tess + 1;
    for (int j = 0; j < tess; ++j) {
        for (int i = 0; i < tess; ++i) {
            const std::int32_t v00 = base + j * row + i;
            const std::int32_t v10 = v00 + 1;
            const std::int32_t v01 = v00 + row;
            const std::int32_t v11 = v01 + 1;
            mesh.faces.push_back({v00, v10, v01});
            mesh.faces.push_back({v11, v01, v10});
        }
    }
}

Rgb rgb_from_json(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
Vec3 vec3_from_json(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
nlohmann::json to_json_array(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }
nlohmann::json to_json_array(const Rgb& v) { return nlohmann::json::array({v[0], v[1], v[2]}); }

}  // namespace

std::vector<Camera> ViewSet::cameras() const {
    std::vector<Camera> cams;
    cams.reserve(views.size());
    for (const auto& v : views) cams.push_back(v.camera);
    return cams;
}

std::vector<Camera> rig_cameras(const RigSpec& rig) {
    require(rig.inputs >= 1 && rig.targets >= 0, ErrorCode::InvalidArgument, "rig view counts");
    std::vector<double> xs;
    const double half = 0.5 * rig.baseline;
    for (int i = 0; i < rig.inputs; ++i) {
        xs.push_back(rig.inputs == 1 ? 0.0 : -half + rig.baseline * i / (rig.inputs - 1));
    }
    for (int j = 0; j < rig.targets; ++j) xs.push_back(-half + rig.baseline * (j + 1) / (rig.targets + 1));

    std::vector<Camera> cams;
    for (double x : xs) {
        Camera cam;
        cam.intrinsics = {rig.focal, rig.focal, 0.5 * (rig.width - 1), 0.5 * (rig.height - 1), rig.width, rig.height};
        const Vec3 eye(x, 0.0, 0.0);
        if (rig.look_at) {
            cam.pose = look_at(eye, *rig.look_at);
        } else {
            cam.pose.R = Mat3::Identity();
            cam.pose.t = -eye;
        }
        cam.validate();
        cams.push_back(cam);
    }
    return cams;
}

TriangleSurface scene_mesh(const SceneSpec& spec) {
    require(!spec.primitives.empty(), ErrorCode::InvalidArgument, "scene needs at least one primitive");
    TriangleSurface mesh;
    mesh.sh_size = 1;
    for (const auto& prim : spec.primitives) {
        if (prim.kind == PrimitiveSpec::Kind::Plane) {
            append_grid(mesh, prim.center, prim.axis_u, prim.axis_v, prim.tessellation, prim.texture);
            continue;
        }
        const Vec3 c = 0.5 * (prim.min_corner + prim.max_corner);
        const Vec3 h = 0.5 * (prim.max_corner - prim.min_corner);
        require(h.minCoeff() > 0.0, ErrorCode::InvalidArgument, "box must have positive extent");
        const Vec3 ex(h.x(), 0.0, 0.0), ey(0.0, h.y(), 0.0), ez(0.0, 0.0, h.z());
        append_grid(mesh, c - ez, ex, ey, prim.tessellation, prim.texture);
        append_grid(mesh, c + ez, ex, ey, prim.tessellation, prim.texture);
        append_grid(mesh, c - ex, ez, ey, prim.tessellation, prim.texture);
        append_grid(mesh, c + ex, ez, ey, prim.tessellation, prim.texture);
        append_grid(mesh, c - ey, ex, ez, prim.tessellation, prim.texture);
        append_grid(mesh, c + ey, ex, ez, prim.tessellation, prim.texture);
    }
    return mesh;
}

std::optional<double> cast_depth(const TriangleSurface& mesh, const Camera& cam, const Vec2& pixel) {
    const auto& k = cam.intrinsics;
    const Vec3 dir((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
    std::optional<double> best;
    for (const Face& f : mesh.faces) {
        const Vec3 a = cam.to_camera(mesh.vertices[f[0]]);
        const Vec3 b = cam.to_camera(mesh.vertices[f[1]]);
        const Vec3 c = cam.to_camera(mesh.vertices[f[2]]);
        const Vec3 n = (b - a).cross(c - a);
        const double denom = n.dot(dir);
        if (denom == 0.0) continue;
        const double z = n.dot(a) / denom;
        if (!(z > kNearCull)) continue;
        if (best && z >= *best) continue;
        const Vec3 p = z * dir;
        // inside test via signed sub-areas relative to the face normal
        const double wa = (c - b).cross(p - b).dot(n);
        const double wb = (a - c).cross(p - c).dot(n);
        const double wc = (b - a).cross(p - a).dot(n);
        const double tol = -1e-12 * n.squaredNorm();
        if (wa >= tol && wb >= tol && wc >= tol) best = z;
    }
    return best;
}

PointCloud ground_truth_cloud(const TriangleSurface& mesh, std::span<const Camera> cams, int s, double far,
                              double noise_sigma, std::uint64_t seed) {
    PointCloud cloud;
    std::mt19937_64 rng(seed ^ 0x5eedc10dull);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const Camera& cam : cams) {
        const int w = cam.intrinsics.width / s;
        const int h = cam.intrinsics.height / s;
        const std::size_t base = cloud.size();
        cloud.resize(base + static_cast<std::size_t>(w) * h);
        parallel_for(static_cast<std::size_t>(h), [&](std::size_t row) {
            const int v = static_cast<int>(row);
            for (int u = 0; u < w; ++u) {
                const Vec2 px = block_center(u, v, s);
                const double z = cast_depth(mesh, cam, px).value_or(far);
                cloud[base + static_cast<std::size_t>(v) * w + u] = back_project(cam, px, z);
            }
        });
    }
    if (noise_sigma > 0.0) {
        for (Vec3& p : cloud) {
            for (int a = 0; a < 3; ++a) p[a] += noise_sigma * normal(rng);
        }
    }
    return cloud;
}

Scene gen_scene(const SceneSpec& spec) {
    require(spec.near > 0.0 && spec.far > spec.near, ErrorCode::InvalidRange, "scene depth range");
    Scene scene;
    scene.spec = spec;
    scene.mesh = scene_mesh(spec);
    const auto cams = rig_cameras(spec.rig);
    for (const Camera& cam : cams) {
        for (const Vec3& v : scene.mesh.vertices) {
            if (!(cam.to_camera(v).z() > kNearCull)) {
                fail(ErrorCode::PrimitiveBehindCamera, "a primitive reaches behind a camera");
            }
        }
    }

    std::vector<View> views(cams.size());
    const Rgb black{0.0, 0.0, 0.0};
    parallel_for(cams.size(), [&](std::size_t i) {
        const ReferenceRender rr = reference_render_with_depth(scene.mesh, cams[i], black);
        View& v = views[i];
        v.camera = cams[i];
        v.image = rr.color;
        DepthMap dm(rr.depth.width, rr.depth.height);
        for (std::size_t p = 0; p < dm.depth.size(); ++p) {
            dm.depth[p] = rr.depth.data[p];
            dm.valid[p] = rr.depth.data[p] > 0.0 ? 1 : 0;
        }
        v.depth = std::move(dm);
    });

    const auto n_in = static_cast<std::size_t>(spec.rig.inputs);
    scene.inputs.views.assign(views.begin(), views.begin() + static_cast<std::ptrdiff_t>(n_in));
    scene.targets.views.assign(views.begin() + static_cast<std::ptrdiff_t>(n_in), views.end());
    const auto in_cams = scene.inputs.cameras();
    scene.inputs.cloud =
        ground_truth_cloud(scene.mesh, in_cams, spec.downsample, spec.far, spec.cloud_noise, spec.seed);
    return scene;
}

SceneSpec random_scene_spec(std::uint64_t seed, SceneKind kind) {
    std::mt19937_64 rng(splitmix64(seed));
    auto uniform = [&](double lo, double hi) {
        return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
    };
    // per channel one dark and one bright endpoint, so textures stay matchable
    auto random_texture = [&](TextureSpec::Kind kind_, double cell_lo, double cell_hi) {
        TextureSpec t;
        t.kind = kind_;
        t.cell = uniform(cell_lo, cell_hi);
        for (int k = 0; k < 3; ++k) {
            const double dark = uniform(0.05, 0.3);
            const double bright = uniform(0.7, 0.95);
            const bool flip = uniform(0.0, 1.0) < 0.5;
            t.color_a[k] = flip ? bright : dark;
            t.color_b[k] = flip ? dark : bright;
        }
        t.seed = rng();
        return t;
    };

    SceneSpec spec;
    spec.seed = seed;
    spec.near = 1.5;
    spec.far = 5.0;
    spec.downsample = 2;
    spec.rig.inputs = 2;
    spec.rig.targets = 3;
    spec.rig.baseline = 0.6;
    spec.rig.width = 64;
    spec.rig.height = 64;
    spec.rig.focal = 64.0;

    PrimitiveSpec backdrop;
    backdrop.kind = PrimitiveSpec::Kind::Plane;
    const double zb = uniform(3.2, 4.0);
    backdrop.center = Vec3(uniform(-0.2, 0.2), uniform(-0.2, 0.2), zb);
    const double tilt_x = uniform(-0.15, 0.15);
    const double tilt_y = uniform(-0.15, 0.15);
    backdrop.axis_u = Vec3(3.2, 0.0, 3.2 * tilt_x);
    backdrop.axis_v = Vec3(0.0, 3.2, 3.2 * tilt_y);
    backdrop.texture = random_texture(TextureSpec::Kind::Noise, 0.35, 0.6);
    backdrop.tessellation = 48;
    spec.primitives.push_back(backdrop);

    if (kind == SceneKind::Box) {
        PrimitiveSpec box;
        box.kind = PrimitiveSpec::Kind::Box;
        const Vec3 c(uniform(-0.35, 0.35), uniform(-0.3, 0.3), uniform(2.2, 2.7));
        const Vec3 h(uniform(0.3, 0.5), uniform(0.3, 0.5), uniform(0.25, 0.4));
        box.min_corner = c - h;
        box.max_corner = c + h;
        const auto box_kind = uniform(0.0, 1.0) < 0.5 ? TextureSpec::Kind::Checker : TextureSpec::Kind::Noise;
        box.texture = random_texture(box_kind, 0.2, 0.35);
        box.tessellation = 12;
        spec.primitives.push_back(box);
    }
    return spec;
}

EvalReport eval_views(const TriangleSurface& surface, const ViewSet& targets, const Rgb& bg) {
    EvalReport report;
    report.views.resize(targets.views.size());
    for (std::size_t i = 0; i < targets.views.size(); ++i) {
        const View& v = targets.views[i];
        const RenderOutput out = rasterize(surface, v.camera, bg);
        report.views[i].psnr = psnr(out.color, v.image);
        report.views[i].ssim = ssim_value(out.color, v.image);
    }
    if (!report.views.empty()) {
        double sp = 0.0, ss = 0.0;
        for (const auto& s : report.views) {
            sp += s.psnr;
            ss += s.ssim;
        }
        report.mean_psnr = sp / static_cast<double>(report.views.size());
        report.mean_ssim = ss / static_cast<double>(report.views.size());
    }
    return report;
}

Image constant_mean_image(const Image& gt) {
    Image out(gt.width, gt.height);
    const std::size_t n = gt.pixel_count();
    for (int c = 0; c < 3; ++c) {
        std::vector<double> channel(n);
        for (std::size_t i = 0; i < n; ++i) channel[i] = gt.data[i * 3 + c];
        const double mean = n ? pairwise_sum(channel) / static_cast<double>(n) : 0.0;
        for (std::size_t i = 0; i < n; ++i) out.data[i * 3 + c] = mean;
    }
    return out;
}

nlohmann::json to_json(const SceneSpec& spec) {
    nlohmann::json j;
    j["seed"] = spec.seed;
    j["near"] = spec.near;
    j["far"] = spec.far;
    j["downsample"] = spec.downsample;
    j["cloud_noise"] = spec.cloud_noise;
    auto& rig = j["rig"];
    rig["inputs"] = spec.rig.inputs;
    rig["targets"] = spec.rig.targets;
    rig["baseline"] = spec.rig.baseline;
    rig["width"] = spec.rig.width;
    rig["height"] = spec.rig.height;
    rig["focal"] = spec.rig.focal;
    rig["look_at"] = spec.rig.look_at ? to_json_array(*spec.rig.look_at) : nlohmann::json(nullptr);
    j["primitives"] = nlohmann::json::array();
    for (const auto& p : spec.primitives) {
        nlohmann::json pj;
        if (p.kind == PrimitiveSpec::Kind::Plane) {
            pj["type"] = "plane";
            pj["center"] = to_json_array(p.center);
            pj["axis_u"] = to_json_array(p.axis_u);
            pj["axis_v"] = to_json_array(p.axis_v);
        } else {
            pj["type"] = "box";
            pj["min"] = to_json_array(p.min_corner);
            pj["max"] = to_json_array(p.max_corner);
        }
        pj["tessellation"] = p.tessellation;
        auto& t = pj["texture"];
        t["kind"] = p.texture.kind == TextureSpec::Kind::Solid     ? "solid"
                    : p.texture.kind == TextureSpec::Kind::Checker ? "checker"
                                                                   : "noise";
        t["cell"] = p.texture.cell;
        t["color_a"] = to_json_array(p.texture.color_a);
        t["color_b"] = to_json_array(p.texture.color_b);
        t["seed"] = p.texture.seed;
        j["primitives"].push_back(pj);
    }
    return j;
}

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
    try {
        SceneSpec spec;
        spec.seed = j.value("seed", std::uint64_t{0});
        spec.near = j.value("near", 1.0);
        spec.far = j.value("far", 5.0);
        spec.downsample = j.value("downsample", 4);
        spec.cloud_noise = j.value("cloud_noise", 0.0);
        if (j.contains("rig")) {
            const auto& r = j.at("rig");
            spec.rig.inputs = r.value("inputs", 2);
            spec.rig.targets = r.value("targets", 3);
            spec.rig.baseline = r.value("baseline", 0.3);
            spec.rig.width = r.value("width", 64);
            spec.rig.height = r.value("height", 64);
            spec.rig.focal = r.value("focal", 64.0);
            if (r.contains("look_at") && !r.at("look_at").is_null()) spec.rig.look_at = vec3_from_json(r.at("look_at"));
        }
        for (const auto& pj : j.at("primitives")) {
            PrimitiveSpec p;
            const auto type = pj.at("type").get<std::string>();
            if (type == "plane") {
                p.kind = PrimitiveSpec::Kind::Plane;
                p.center = vec3_from_json(pj.at("center"));
                p.axis_u = vec3_from_json(pj.at("axis_u"));
                p.axis_v = vec3_from_json(pj.at("axis_v"));
            } else if (type == "box") {
                p.kind = PrimitiveSpec::Kind::Box;
                p.min_corner = vec3_from_json(pj.at("min"));
                p.max_corner = vec3_from_json(pj.at("max"));
            } else {
                fail(ErrorCode::ParseError, "unknown primitive type '" + type + "'");
            }
            p.tessellation = pj.value("tessellation", 32);
            if (pj.contains("texture")) {
                const auto& t = pj.at("texture");
                const auto kind = t.value("kind", std::string("checker"));
                if (kind == "solid") p.texture.kind = TextureSpec::Kind::Solid;
                else if (kind == "checker") p.texture.kind = TextureSpec::Kind::Checker;
                else if (kind == "noise") p.texture.kind = TextureSpec::Kind::Noise;
                else fail(ErrorCode::ParseError, "unknown texture kind '" + kind + "'");
                p.texture.cell = t.value("cell", 0.25);
                if (t.contains("color_a")) p.texture.color_a = rgb_from_json(t.at("color_a"));
                if (t.contains("color_b")) p.texture.color_b = rgb_from_json(t.at("color_b"));
                p.texture.seed = t.value("seed", std::uint64_t{0});
            }
            spec.primitives.push_back(p);
        }
        return spec;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, std::string("scene spec: ") + e.what());
    }
}

nlohmann::json to_json(const EvalReport& report) {
    nlohmann::json j;
    j["views"] = nlohmann::json::array();
    for (const auto& v : report.views) j["views"].push_back({{"psnr", v.psnr}, {"ssim", v.ssim}});
    j["mean_psnr"] = report.mean_psnr;
    j["mean_ssim"] = report.mean_ssim;
    return j;
}

}  // namespace trisplat
