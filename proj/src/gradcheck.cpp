#include "trisplat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "trisplat/depthvol.hpp"
#include "trisplat/error.hpp"
#include "trisplat/harness.hpp"
#include "trisplat/losses.hpp"
#include "trisplat/raster.hpp"
#include "trisplat/sh.hpp"
#include "trisplat/surface.hpp"
#include "trisplat/train.hpp"

namespace trisplat {

std::optional<GradComponent> parse_grad_component(std::string_view name) {
    if (name == "raster") return GradComponent::Raster;
    if (name == "losses") return GradComponent::Losses;
    if (name == "depthvol") return GradComponent::Depthvol;
    if (name == "head") return GradComponent::Head;
    if (name == "end-to-end") return GradComponent::EndToEnd;
    if (name == "all") return GradComponent::All;
    return std::nullopt;
}

std::string_view to_string(GradComponent c) {
    switch (c) {
        case GradComponent::Raster: return "raster";
        case GradComponent::Losses: return "losses";
        case GradComponent::Depthvol: return "depthvol";
        case GradComponent::Head: return "head";
        case GradComponent::EndToEnd: return "end-to-end";
        case GradComponent::All: return "all";
    }
    return "unknown";
}

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
    return std::abs(analytic - numeric) / denom;
}

namespace {

using Signature = std::vector<std::int64_t>;

/// Objective value plus a fingerprint of every discrete choice the analytic
/// adjoint holds fixed (coverage, fragment order, clamps, kinks).
struct Sample {
    double value = 0.0;
    Signature signature;
};

class Checker {
public:
    Checker(GradCheckReport& report, std::string component) : report_(report), component_(std::move(component)) {}

    /// Central difference of `eval` around x0 with step h. Returns false when
    /// the probe was skipped.
    bool probe(const std::string& quantity, std::size_t index, double analytic, double x0, double h,
               const Signature& base, const std::function<Sample(double)>& eval, double tolerance) {
        const Sample plus = eval(x0 + h);
        const Sample minus = eval(x0 - h);
        if (plus.signature != base || minus.signature != base) {
            ++report_.skipped;
            return false;
        }
        ProbeResult r;
        r.component = component_;
        r.quantity = quantity;
        r.index = index;
        r.analytic = analytic;
        r.numeric = (plus.value - minus.value) / (2.0 * h);
        r.rel_error = relative_error(r.analytic, r.numeric);
        r.tolerance = tolerance;
        report_.probes.push_back(r);
        return true;
    }

private:
    GradCheckReport& report_;
    std::string component_;
};

double relative_step(double x) { return 1e-5 * std::max(1.0, std::abs(x)); }

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

Image random_image(std::mt19937_64& rng, int w, int h, double lo = 0.0, double hi = 1.0) {
    Image img(w, h);
    for (double& v : img.data) v = uniform(rng, lo, hi);
    return img;
}

template <typename T>
void append_sign(Signature& sig, T value) {
    sig.push_back(value > 0 ? 1 : (value < 0 ? -1 : 0));
}

// ---------------------------------------------------------------------------
// Rendering helpers shared by the raster and end-to-end components.

void append_render_signature(Signature& sig, const TriangleSurface& surf, const Camera& cam,
                             const RenderOutput& out) {
    sig.push_back(static_cast<std::int64_t>(out.fragments.size()));
    for (std::size_t p = 0; p + 1 < out.offsets.size(); ++p) {
        sig.push_back(-1);
        for (std::uint32_t f = out.offsets[p]; f < out.offsets[p + 1]; ++f) sig.push_back(out.fragments[f].face);
    }
    const Vec3 center = cam.center();
    for (std::size_t i = 0; i < surf.num_vertices(); ++i) {
        const Vec3 d = center - surf.vertices[i];
        const double len = d.norm();
        if (!(len > 0.0)) continue;
        const ShColor col = eval_sh(surf.sh_of(i), surf.sh_size, d / len);
        for (bool c : col.clamped) sig.push_back(c ? 1 : 0);
    }
}

TriangleSurface random_raster_scene(std::mt19937_64& rng, int sh_size) {
    TriangleSurface surf;
    surf.sh_size = sh_size;
    const int faces = 4 + static_cast<int>(pick(rng, 13));
    for (int f = 0; f < faces; ++f) {
        const Vec3 c(uniform(rng, -0.8, 0.8), uniform(rng, -0.8, 0.8), uniform(rng, -0.5, 0.5));
        const auto base = static_cast<std::int32_t>(surf.vertices.size());
        for (int k = 0; k < 3; ++k) {
            surf.vertices.push_back(c + Vec3(uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6), uniform(rng, -0.3, 0.3)));
            surf.opacity.push_back(uniform(rng, 0.1, 0.9));
            for (int ch = 0; ch < 3; ++ch) {
                surf.sh.push_back((uniform(rng, 0.25, 0.75) - 0.5) / kShC0);
                for (int j = 1; j < sh_size; ++j) surf.sh.push_back(uniform(rng, -0.1, 0.1));
            }
        }
        surf.faces.push_back({base, base + 1, base + 2});
    }
    return surf;
}

Camera random_camera(std::mt19937_64& rng, int size) {
    Camera cam;
    const double f = size * uniform(rng, 0.9, 1.3);
    cam.intrinsics = {f, f, 0.5 * (size - 1), 0.5 * (size - 1), size, size};
    const Vec3 eye(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), -uniform(rng, 3.0, 4.0));
    cam.pose = look_at(eye, Vec3(uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), 0.0));
    return cam;
}

void check_raster(GradCheckReport& report, std::mt19937_64& rng, int probes, bool corrupt) {
    Checker checker(report, "raster");
    constexpr int kSize = 32;
    int done = 0;
    int attempts = 0;
    while (done < probes && attempts < 20 * probes) {
        const TriangleSurface base = random_raster_scene(rng, 4);
        const Camera cam = random_camera(rng, kSize);
        const Rgb bg{uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
        const Image gc = random_image(rng, kSize, kSize, -1.0, 1.0);
        ScalarMap gd(kSize, kSize);
        for (double& v : gd.data) v = uniform(rng, -0.1, 0.1);

        auto objective = [&](const TriangleSurface& s) {
            const RenderOutput out = rasterize(s, cam, bg);
            Sample smp;
            for (std::size_t i = 0; i < gc.data.size(); ++i) smp.value += gc.data[i] * out.color.data[i];
            for (std::size_t i = 0; i < gd.data.size(); ++i) smp.value += gd.data[i] * out.depth.data[i];
            append_render_signature(smp.signature, s, cam, out);
            return smp;
        };
        const RenderOutput out = rasterize(base, cam, bg);
        if (out.fragments.empty()) {
            ++attempts;
            continue;
        }
        const Signature sig = objective(base).signature;
        const SurfaceGradients g = rasterize_backward(out, base, cam, gc, gd);

        std::vector<std::size_t> visible;
        for (const Fragment& frag : out.fragments) {
            for (int k = 0; k < 3; ++k) visible.push_back(static_cast<std::size_t>(base.faces[frag.face][k]));
        }
        std::sort(visible.begin(), visible.end());
        visible.erase(std::unique(visible.begin(), visible.end()), visible.end());

        // a handful of probes per scene keeps the scene mix varied
        for (int k = 0; k < 12 && done < probes; ++k, ++attempts) {
            const std::size_t v = visible[pick(rng, visible.size())];
            TriangleSurface s = base;
            bool ok = false;
            switch (done % 3) {
                case 0: {
                    const double a = corrupt ? -g.opacity[v] : g.opacity[v];
                    ok = checker.probe("opacity", v, a, base.opacity[v], relative_step(base.opacity[v]), sig,
                                       [&](double x) {
                                           s.opacity[v] = x;
                                           return objective(s);
                                       },
                                       kDefaultTolerance);
                    break;
                }
                case 1: {
                    const std::size_t j = v * 3 * base.sh_size + pick(rng, 3 * base.sh_size);
                    ok = checker.probe("sh", j, g.sh[j], base.sh[j], relative_step(base.sh[j]), sig,
                                       [&](double x) {
                                           s.sh[j] = x;
                                           return objective(s);
                                       },
                                       kDefaultTolerance);
                    break;
                }
                default: {
                    const int axis = static_cast<int>(pick(rng, 3));
                    ok = checker.probe("position", 3 * v + axis, g.vertices[v][axis], base.vertices[v][axis], 1e-5,
                                       sig,
                                       [&](double x) {
                                           s.vertices[v][axis] = x;
                                           return objective(s);
                                       },
                                       kPositionTolerance);
                    break;
                }
            }
            if (ok) ++done;
        }
    }
}

// ---------------------------------------------------------------------------

Signature point_signature(const PointCloud& x) {
    Signature sig;
    std::vector<std::size_t> order(x.size());
    for (int axis = 0; axis < 3; ++axis) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return x[a][axis] < x[b][axis] || (x[a][axis] == x[b][axis] && a < b);
        });
        sig.insert(sig.end(), order.begin(), order.end());
    }
    const Vec3 med = coordinate_median(x);
    std::vector<double> norms(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) norms[i] = (x[i] - med).norm();
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return norms[a] < norms[b] || (norms[a] == norms[b] && a < b);
    });
    sig.insert(sig.end(), order.begin(), order.end());
    return sig;
}

void append_depth_kinks(Signature& sig, const ScalarMap& d) {
    for (int y = 0; y + 1 < d.height; ++y) {
        for (int x = 0; x + 1 < d.width; ++x) {
            append_sign(sig, d.at(x + 1, y) - d.at(x, y));
            append_sign(sig, d.at(x, y + 1) - d.at(x, y));
        }
    }
}

void check_losses(GradCheckReport& report, std::mt19937_64& rng, int probes) {
    Checker checker(report, "losses");
    int done = 0;
    int attempts = 0;
    while (done < probes && attempts < 20 * probes) {
        ++attempts;
        switch (done % 4) {
            case 0: {
                const Image r = random_image(rng, 12, 12);
                const Image gt = random_image(rng, 12, 12);
                const auto base = l1_loss(r, gt);
                const std::size_t j = pick(rng, r.data.size());
                Image s = r;
                auto eval = [&](double x) {
                    s.data[j] = x;
                    Sample smp{l1_loss(s, gt).value, {}};
                    for (std::size_t i = 0; i < s.data.size(); ++i) append_sign(smp.signature, s.data[i] - gt.data[i]);
                    return smp;
                };
                Signature sig;
                for (std::size_t i = 0; i < r.data.size(); ++i) append_sign(sig, r.data[i] - gt.data[i]);
                if (checker.probe("l1", j, base.grad.data[j], r.data[j], relative_step(r.data[j]), sig, eval,
                                  kDefaultTolerance)) {
                    ++done;
                }
                break;
            }
            case 1: {
                const Image r = random_image(rng, 16, 16);
                Image gt = r;
                for (double& v : gt.data) v = std::clamp(v + uniform(rng, -0.3, 0.3), 0.0, 1.0);
                const auto base = ssim(r, gt);
                const std::size_t j = pick(rng, r.data.size());
                Image s = r;
                if (checker.probe("ssim", j, base.grad.data[j], r.data[j], relative_step(r.data[j]), {},
                                  [&](double x) {
                                      s.data[j] = x;
                                      return Sample{ssim(s, gt).value, {}};
                                  },
                                  kDefaultTolerance)) {
                    ++done;
                }
                break;
            }
            case 2: {
                ScalarMap d(16, 16);
                for (double& v : d.data) v = uniform(rng, 1.0, 3.0);
                const Image gt = random_image(rng, 16, 16);
                const auto base = depth_smoothness(d, gt);
                const std::size_t j = pick(rng, d.data.size());
                ScalarMap s = d;
                Signature sig;
                append_depth_kinks(sig, d);
                if (checker.probe("depth_smoothness", j, base.grad.data[j], d.data[j], relative_step(d.data[j]), sig,
                                  [&](double x) {
                                      s.data[j] = x;
                                      Sample smp{depth_smoothness(s, gt).value, {}};
                                      append_depth_kinks(smp.signature, s);
                                      return smp;
                                  },
                                  kDefaultTolerance)) {
                    ++done;
                }
                break;
            }
            default: {
                const std::size_t m = 20 + pick(rng, 21);
                PointCloud v(m), p(m);
                for (std::size_t i = 0; i < m; ++i) {
                    v[i] = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, 1, 3));
                    p[i] = v[i] + Vec3(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3));
                }
                const double alpha = uniform(rng, 0.7, 1.0);
                const auto base = point_loss(v, p, alpha);
                const std::size_t i = pick(rng, m);
                const int axis = static_cast<int>(pick(rng, 3));
                PointCloud s = v;
                if (checker.probe("point_loss", 3 * i + axis, base.grad[i][axis], v[i][axis],
                                  relative_step(v[i][axis]), point_signature(v),
                                  [&](double x) {
                                      s[i][axis] = x;
                                      return Sample{point_loss(s, p, alpha).value, point_signature(s)};
                                  },
                                  kDefaultTolerance)) {
                    ++done;
                }
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------

void check_depthvol(GradCheckReport& report, std::mt19937_64& rng, int probes) {
    Checker checker(report, "depthvol");
    int done = 0;
    while (done < probes) {
        CostVolume cv;
        cv.width = 5;
        cv.height = 4;
        const int d = 2 + static_cast<int>(pick(rng, 15));
        cv.depths = sample_depth_hypotheses(1.0, uniform(rng, 2.0, 6.0), d);
        cv.scores.resize(static_cast<std::size_t>(cv.width) * cv.height * d);
        for (double& s : cv.scores) s = uniform(rng, -1.0, 1.0);
        const double tau = uniform(rng, 0.05, 1.0);
        std::vector<double> g(static_cast<std::size_t>(cv.width) * cv.height);
        for (double& v : g) v = uniform(rng, -1.0, 1.0);
        auto objective = [&](const CostVolume& c) {
            const DepthMap dm = regress_depth(c, tau);
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * dm.depth[i];
            return acc;
        };
        const std::vector<double> grad = regress_depth_backward(cv, tau, g);
        for (int k = 0; k < 10 && done < probes; ++k) {
            const std::size_t j = pick(rng, cv.scores.size());
            CostVolume s = cv;
            if (checker.probe("softmax_depth", j, grad[j], cv.scores[j], relative_step(cv.scores[j]), {},
                              [&](double x) {
                                  s.scores[j] = x;
                                  return Sample{objective(s), {}};
                              },
                              kDefaultTolerance)) {
                ++done;
            }
        }
    }
}

// ---------------------------------------------------------------------------

Signature relu_signature(const HeadCache& cache) {
    Signature sig;
    for (Eigen::Index i = 0; i < cache.z1.size(); ++i) sig.push_back(cache.z1.data()[i] > 0.0);
    for (Eigen::Index i = 0; i < cache.z2.size(); ++i) sig.push_back(cache.z2.data()[i] > 0.0);
    return sig;
}

void check_head(GradCheckReport& report, std::mt19937_64& rng, int probes) {
    Checker checker(report, "head");
    constexpr int kIn = 18, kHidden = 16, kSh = 4;
    int done = 0;
    int attempts = 0;
    while (done < probes && attempts < 20 * probes) {
        const TriangleHeadParams params = TriangleHeadParams::random(kIn, kHidden, 1 + 3 * kSh, rng());
        const Eigen::MatrixXd input = Eigen::MatrixXd::NullaryExpr(10, kIn, [&] { return uniform(rng, -1.0, 1.0); });
        const Eigen::VectorXd go = Eigen::VectorXd::NullaryExpr(10, [&] { return uniform(rng, -1.0, 1.0); });
        const Eigen::MatrixXd gsh = Eigen::MatrixXd::NullaryExpr(10, 3 * kSh, [&] { return uniform(rng, -1.0, 1.0); });
        auto objective = [&](const TriangleHeadParams& p, const Eigen::MatrixXd& x) {
            const HeadOutput out = decode_vertices(x, p, kSh);
            return Sample{go.dot(out.opacity) + (gsh.array() * out.sh.array()).sum(), relu_signature(out.cache)};
        };
        const HeadOutput out = decode_vertices(input, params, kSh);
        const HeadGradients g = decode_vertices_backward(params, out.cache, go, gsh);
        const Signature sig = relu_signature(out.cache);
        const std::vector<double> flat = params.pack();
        const std::vector<double> gflat = g.params.pack();
        for (int k = 0; k < 10 && done < probes; ++k, ++attempts) {
            bool ok = false;
            if (k % 3 != 2) {
                const std::size_t j = pick(rng, flat.size());
                TriangleHeadParams p = params;
                std::vector<double> f = flat;
                ok = checker.probe("head_params", j, gflat[j], flat[j], relative_step(flat[j]), sig,
                                   [&](double x) {
                                       f[j] = x;
                                       p.unpack(f);
                                       return objective(p, input);
                                   },
                                   kDefaultTolerance);
            } else {
                const auto r = static_cast<Eigen::Index>(pick(rng, 10));
                const auto c = static_cast<Eigen::Index>(pick(rng, kIn));
                Eigen::MatrixXd x = input;
                ok = checker.probe("head_input", static_cast<std::size_t>(r * kIn + c), g.input(r, c), input(r, c),
                                   relative_step(input(r, c)), sig,
                                   [&](double v) {
                                       x(r, c) = v;
                                       return objective(params, x);
                                   },
                                   kDefaultTolerance);
            }
            if (ok) ++done;
        }
    }
}

// ---------------------------------------------------------------------------

/// Micro pipeline: two 16x16 input views (4x4 vertex grids), two depth
/// hypotheses, one target view; loss = photometric + smoothness + points.
void check_end_to_end(GradCheckReport& report, std::mt19937_64& rng, int probes) {
    Checker checker(report, "end-to-end");
    int done = 0;
    int attempts = 0;
    while (done < probes && attempts < 40 * probes) {
        SceneSpec spec;
        spec.near = 1.5;
        spec.far = 3.0;
        spec.downsample = 4;
        spec.seed = rng();
        spec.rig = RigSpec{2, 1, 0.3, std::nullopt, 16, 16, 16.0};
        PrimitiveSpec plane;
        plane.center = Vec3(0.0, 0.0, uniform(rng, 1.8, 2.6));
        plane.axis_u = Vec3(3.0, 0.0, uniform(rng, -0.4, 0.4));
        plane.axis_v = Vec3(0.0, 3.0, uniform(rng, -0.4, 0.4));
        plane.texture.kind = TextureSpec::Kind::Noise;
        plane.texture.cell = 0.4;
        plane.texture.seed = rng();
        plane.tessellation = 8;
        spec.primitives = {plane};
        const Scene scene = gen_scene(spec);

        TrainConfig cfg;
        cfg.depth_hypotheses = 2;
        cfg.downsample = 4;
        cfg.sh_size = 1;
        cfg.temperature = 0.3;
        cfg.hidden = 8;
        cfg.seed = rng();
        FeedForwardModel model = FeedForwardModel::create(cfg);
        model.calibration.gain = uniform(rng, 0.5, 1.5);
        for (double& b : model.calibration.bias) b = uniform(rng, -0.1, 0.1);
        for (Eigen::Index i = 0; i < model.refine.w3.size(); ++i) model.refine.w3(i) = uniform(rng, -0.5, 0.5);

        const PreparedScene ps = prepare_scene(scene.inputs, spec.near, spec.far, model);
        LossWeights weights;
        weights.points = 0.5;
        const double alpha = 0.95;

        auto objective = [&](const FeedForwardModel& m, SurfaceGradients* grad, const ForwardState** keep,
                             ForwardState& storage) {
            storage = feedforward(m, ps);
            if (keep) *keep = &storage;
            Sample smp;
            smp.value = scene_loss(storage.surface, scene.targets, ps.background, ps.cloud, weights, alpha, grad).total;
            smp.signature = relu_signature(storage.head.cache);
            const Signature refine_sig = relu_signature(storage.refine);
            smp.signature.insert(smp.signature.end(), refine_sig.begin(), refine_sig.end());
            for (const View& v : scene.targets.views) {
                const RenderOutput out = rasterize(storage.surface, v.camera, ps.background);
                append_render_signature(smp.signature, storage.surface, v.camera, out);
                for (std::size_t i = 0; i < out.color.data.size(); ++i) {
                    append_sign(smp.signature, out.color.data[i] - v.image.data[i]);
                }
                append_depth_kinks(smp.signature, out.depth);
            }
            const Signature ps_sig = point_signature(storage.surface.vertices);
            smp.signature.insert(smp.signature.end(), ps_sig.begin(), ps_sig.end());
            return smp;
        };

        ForwardState base_state;
        const ForwardState* kept = nullptr;
        SurfaceGradients g;
        const Sample base = objective(model, &g, &kept, base_state);
        const std::vector<double> grad = feedforward_backward(model, ps, *kept, g);
        const std::vector<double> flat = model.pack();
        const std::size_t n_head = model.head.parameter_count();
        const std::size_t n_calib = 1 + model.calibration.bias.size();
        const std::size_t n_refine = model.refine.parameter_count();

        for (int k = 0; k < 6 && done < probes; ++k, ++attempts) {
            // rotate over head, calibration (gain, biases) and refinement parameters;
            // the last two move vertices, so they get the position tolerance
            const int kind = k % 3;
            const bool geometry = kind != 0;
            std::size_t j = pick(rng, n_head);
            if (kind == 1) j = n_head + pick(rng, n_calib);
            if (kind == 2) j = n_head + n_calib + pick(rng, n_refine);
            const char* quantity = kind == 0 ? "e2e_head" : (kind == 1 ? "e2e_calibration" : "e2e_refine");
            FeedForwardModel m = model;
            std::vector<double> f = flat;
            ForwardState scratch;
            if (checker.probe(quantity, j, grad[j], flat[j], relative_step(flat[j]),
                              base.signature,
                              [&](double x) {
                                  f[j] = x;
                                  m.unpack(f);
                                  return objective(m, nullptr, nullptr, scratch);
                              },
                              geometry ? kPositionTolerance : kDefaultTolerance)) {
                ++done;
            }
        }
    }
}

int default_probes(GradComponent c) {
    switch (c) {
        case GradComponent::Raster: return 210;
        case GradComponent::Losses: return 120;
        case GradComponent::Depthvol: return 60;
        case GradComponent::Head: return 80;
        case GradComponent::EndToEnd: return 60;
        case GradComponent::All: return 0;
    }
    return 0;
}

}  // namespace

GradCheckReport grad_check(const GradCheckOptions& options) {
    GradCheckReport report;
    std::mt19937_64 rng(options.seed);
    const auto count = [&](GradComponent c) { return options.probes > 0 ? options.probes : default_probes(c); };
    const bool all = options.component == GradComponent::All;
    if (all || options.component == GradComponent::Raster) {
        check_raster(report, rng, count(GradComponent::Raster), options.corrupt_adjoint);
    }
    if (all || options.component == GradComponent::Losses) check_losses(report, rng, count(GradComponent::Losses));
    if (all || options.component == GradComponent::Depthvol) check_depthvol(report, rng, count(GradComponent::Depthvol));
    if (all || options.component == GradComponent::Head) check_head(report, rng, count(GradComponent::Head));
    if (all || options.component == GradComponent::EndToEnd) {
        check_end_to_end(report, rng, count(GradComponent::EndToEnd));
    }
    for (const ProbeResult& p : report.probes) {
        report.max_rel_error = std::max(report.max_rel_error, p.rel_error);
        if (!p.pass()) ++report.failures;
    }
    return report;
}

nlohmann::json to_json(const GradCheckReport& report) {
    nlohmann::json j;
    j["passed"] = report.passed();
    j["probes"] = report.probes.size();
    j["skipped"] = report.skipped;
    j["failures"] = report.failures;
    j["max_rel_error"] = report.max_rel_error;
    nlohmann::json by_quantity = nlohmann::json::object();
    for (const ProbeResult& p : report.probes) {
        auto& q = by_quantity[p.component + "/" + p.quantity];
        if (q.is_null()) q = {{"probes", 0}, {"max_rel_error", 0.0}, {"tolerance", p.tolerance}, {"failures", 0}};
        q["probes"] = q["probes"].get<int>() + 1;
        q["max_rel_error"] = std::max(q["max_rel_error"].get<double>(), p.rel_error);
        if (!p.pass()) q["failures"] = q["failures"].get<int>() + 1;
    }
    j["by_quantity"] = by_quantity;
    nlohmann::json failed = nlohmann::json::array();
    for (const ProbeResult& p : report.probes) {
        if (p.pass() || failed.size() >= 20) continue;
        failed.push_back({{"component", p.component},
                          {"quantity", p.quantity},
                          {"index", p.index},
                          {"analytic", p.analytic},
                          {"numeric", p.numeric},
                          {"rel_error", p.rel_error},
                          {"tolerance", p.tolerance}});
    }
    j["failed_probes"] = failed;
    return j;
}

}  // namespace trisplat
