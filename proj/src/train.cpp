#include "trisplat/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "trisplat/error.hpp"
#include "trisplat/features.hpp"
#include "trisplat/parallel.hpp"
#include "trisplat/sh.hpp"

namespace trisplat {

Schedule Schedule::for_steps(long total_steps, double lambda0, double lambda_min) {
    Schedule s;
    s.lambda0 = lambda0;
    s.lambda_min = lambda_min;
    s.total_steps = total_steps;
    s.tau = std::max(1.0, 0.25 * static_cast<double>(total_steps));
    return s;
}

void Schedule::validate() const {
    require(lambda0 >= lambda_min && lambda_min >= 0.0, ErrorCode::InvalidArgument,
            "schedule needs lambda0 >= lambda_min >= 0");
    require(tau > 0.0, ErrorCode::InvalidArgument, "schedule tau must be positive");
}

double lambda_at(const Schedule& sched, long step) {
    require(step >= 0, ErrorCode::InvalidArgument, "step must be non-negative");
    return std::max(sched.lambda0 * std::exp(-static_cast<double>(step) / sched.tau), sched.lambda_min);
}

void adam_step(OptimizerState& state, std::span<double> params, std::span<const double> grads) {
    require(params.size() == grads.size() && state.m.size() == params.size() && state.v.size() == params.size(),
            ErrorCode::ShapeMismatch, "adam: parameter, gradient and moment sizes differ");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            fail(ErrorCode::NonFiniteGradient, "adam: non-finite gradient at index " + std::to_string(i) +
                                                   " (step " + std::to_string(state.step) + "), parameters kept");
        }
    }
    const AdamConfig& c = state.config;
    state.step += 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
}

Schedule TrainConfig::schedule() const {
    Schedule s = Schedule::for_steps(steps, lambda0, lambda_min);
    if (tau) s.tau = *tau;
    return s;
}

void TrainConfig::validate() const {
    require(steps >= 0, ErrorCode::InvalidArgument, "steps must be non-negative");
    require(lr > 0.0 && lr_positions >= 0.0 && lr_attributes >= 0.0, ErrorCode::InvalidArgument,
            "learning rates must be positive");
    require(weights.perceptual >= 0.0 && weights.ds >= 0.0, ErrorCode::InvalidArgument,
            "loss weights must be non-negative");
    require(depth_hypotheses >= 2, ErrorCode::InvalidArgument, "need at least 2 depth hypotheses");
    require(downsample >= 1, ErrorCode::InvalidArgument, "downsample must be >= 1");
    require(valid_sh_size(sh_size), ErrorCode::InvalidArgument, "sh_size must be 1, 4 or 9");
    require(temperature > 0.0, ErrorCode::InvalidArgument, "temperature must be positive");
    require(alpha > 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument, "alpha must lie in (0, 1]");
    require(hidden >= 1, ErrorCode::InvalidArgument, "hidden width must be >= 1");
    require(refine_hidden >= 1, ErrorCode::InvalidArgument, "refine_hidden width must be >= 1");
    schedule().validate();
}

nlohmann::json to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["steps"] = cfg.steps;
    j["lr"] = cfg.lr;
    j["lr_positions"] = cfg.lr_positions;
    j["lr_attributes"] = cfg.lr_attributes;
    j["weights"] = {{"perceptual", cfg.weights.perceptual}, {"ds", cfg.weights.ds}};
    j["schedule"] = {{"lambda0", cfg.lambda0},
                     {"lambda_min", cfg.lambda_min},
                     {"tau", cfg.tau ? nlohmann::json(*cfg.tau) : nlohmann::json(nullptr)}};
    j["depth_hypotheses"] = cfg.depth_hypotheses;
    j["downsample"] = cfg.downsample;
    j["sh_size"] = cfg.sh_size;
    j["temperature"] = cfg.temperature;
    j["alpha"] = cfg.alpha;
    j["hidden"] = cfg.hidden;
    j["refine_hidden"] = cfg.refine_hidden;
    j["seed"] = cfg.seed;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    static const char* known[] = {"steps",     "lr",          "lr_positions", "lr_attributes", "weights",
                                  "schedule",  "depth_hypotheses", "downsample", "sh_size",   "temperature",
                                  "alpha",     "hidden",      "refine_hidden", "seed"};
    if (!j.is_object()) fail(ErrorCode::ParseError, "config must be a JSON object");
    for (const auto& item : j.items()) {
        if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return item.key() == k; }) ==
            std::end(known)) {
            fail(ErrorCode::ParseError, "config: unknown key '" + item.key() + "'");
        }
    }
    TrainConfig cfg;
    try {
        cfg.steps = j.value("steps", cfg.steps);
        cfg.lr = j.value("lr", cfg.lr);
        cfg.lr_positions = j.value("lr_positions", cfg.lr_positions);
        cfg.lr_attributes = j.value("lr_attributes", cfg.lr_attributes);
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            cfg.weights.perceptual = w.value("perceptual", cfg.weights.perceptual);
            cfg.weights.ds = w.value("ds", cfg.weights.ds);
        }
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            cfg.lambda0 = s.value("lambda0", cfg.lambda0);
            cfg.lambda_min = s.value("lambda_min", cfg.lambda_min);
            if (s.contains("tau") && !s.at("tau").is_null()) cfg.tau = s.at("tau").get<double>();
        }
        cfg.depth_hypotheses = j.value("depth_hypotheses", cfg.depth_hypotheses);
        cfg.downsample = j.value("downsample", cfg.downsample);
        cfg.sh_size = j.value("sh_size", cfg.sh_size);
        cfg.temperature = j.value("temperature", cfg.temperature);
        cfg.alpha = j.value("alpha", cfg.alpha);
        cfg.hidden = j.value("hidden", cfg.hidden);
        cfg.refine_hidden = j.value("refine_hidden", cfg.refine_hidden);
        cfg.seed = j.value("seed", cfg.seed);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string trace_jsonl(const Trace& trace) {
    std::string out;
    for (const auto& rec : trace) {
        out += loss_report_json(rec.step, rec.report);
        out += '\n';
    }
    return out;
}

Rgb mean_color(const ViewSet& views) {
    Rgb out{0.0, 0.0, 0.0};
    std::size_t count = 0;
    for (const View& v : views.views) count += v.image.pixel_count();
    if (count == 0) return out;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> channel;
        channel.reserve(count);
        for (const View& v : views.views) {
            for (std::size_t i = 0; i < v.image.pixel_count(); ++i) channel.push_back(v.image.data[i * 3 + c]);
        }
        out[c] = pairwise_sum(channel) / static_cast<double>(count);
    }
    return out;
}

// ---------------------------------------------------------------------------

LossReport scene_loss(const TriangleSurface& surf, const ViewSet& views, const Rgb& bg, const PointCloud* gt_cloud,
                      const LossWeights& weights, double alpha, SurfaceGradients* grad) {
    require(!views.views.empty(), ErrorCode::InvalidArgument, "scene_loss needs at least one view");
    const double inv_n = 1.0 / static_cast<double>(views.views.size());
    LossWeights photo = weights;
    photo.points = 0.0;

    if (grad) {
        grad->opacity.assign(surf.num_vertices(), 0.0);
        grad->sh.assign(surf.sh.size(), 0.0);
        grad->vertices.assign(surf.num_vertices(), Vec3::Zero());
    }

    LossReport report;
    report.weights = weights;
    for (const View& view : views.views) {
        const RenderOutput out = rasterize(surf, view.camera, bg);
        TotalLoss tl = total_loss(out.color, view.image, out.depth, nullptr, nullptr, photo, alpha);
        report.l1 += inv_n * tl.report.l1;
        report.perceptual += inv_n * tl.report.perceptual;
        report.ds += inv_n * tl.report.ds;
        if (!grad) continue;
        for (double& g : tl.grad_rendered.data) g *= inv_n;
        for (double& g : tl.grad_depth.data) g *= inv_n;
        const SurfaceGradients g = rasterize_backward(out, surf, view.camera, tl.grad_rendered, tl.grad_depth);
        for (std::size_t i = 0; i < g.opacity.size(); ++i) grad->opacity[i] += g.opacity[i];
        for (std::size_t i = 0; i < g.sh.size(); ++i) grad->sh[i] += g.sh[i];
        for (std::size_t i = 0; i < g.vertices.size(); ++i) grad->vertices[i] += g.vertices[i];
    }

    if (weights.points > 0.0 && gt_cloud != nullptr) {
        const auto pl = point_loss(surface_to_cloud(surf), *gt_cloud, alpha);
        report.points = pl.value;
        if (grad) {
            for (std::size_t i = 0; i < pl.grad.size(); ++i) grad->vertices[i] += weights.points * pl.grad[i];
        }
    }
    report.total = report.l1 + weights.perceptual * report.perceptual + weights.ds * report.ds +
                   weights.points * report.points;
    if (!std::isfinite(report.total)) fail(ErrorCode::NonFiniteLoss, "scene loss is not finite");
    return report;
}

OptimizeResult optimize_scene(const ViewSet& views, const TriangleSurface& init, const PointCloud* gt_cloud,
                              const TrainConfig& cfg, const Rgb& bg) {
    cfg.validate();
    init.validate();
    require(!views.views.empty(), ErrorCode::InvalidArgument, "optimize_scene needs at least one view");
    OptimizeResult result;
    result.surface = init;
    if (cfg.steps == 0) return result;
    if (gt_cloud != nullptr && gt_cloud->size() != init.num_vertices()) {
        fail(ErrorCode::SizeMismatch, "ground-truth cloud is not index-aligned with the surface vertices");
    }

    const Schedule sched = cfg.schedule();
    TriangleSurface surf = init;
    const std::size_t n = surf.num_vertices();
    OptimizerState pos_state(3 * n, AdamConfig{cfg.lr_positions});
    OptimizerState op_state(n, AdamConfig{cfg.lr_attributes});
    OptimizerState sh_state(surf.sh.size(), AdamConfig{cfg.lr_attributes});
    std::vector<double> positions(3 * n), pos_grad(3 * n);
    double best = std::numeric_limits<double>::infinity();

    for (long step = 0; step < cfg.steps; ++step) {
        LossWeights weights = cfg.weights;
        weights.points = gt_cloud ? lambda_at(sched, step) : 0.0;
        SurfaceGradients g;
        const LossReport report = scene_loss(surf, views, bg, gt_cloud, weights, cfg.alpha, &g);
        result.trace.push_back({step, report});
        if (report.total < best) {
            best = report.total;
            result.surface = surf;
            result.best_step = step;
        }

        for (std::size_t i = 0; i < n; ++i) {
            for (int a = 0; a < 3; ++a) {
                positions[3 * i + a] = surf.vertices[i][a];
                pos_grad[3 * i + a] = g.vertices[i][a];
            }
        }
        adam_step(pos_state, positions, pos_grad);
        adam_step(op_state, surf.opacity, g.opacity);
        adam_step(sh_state, surf.sh, g.sh);
        for (std::size_t i = 0; i < n; ++i) {
            for (int a = 0; a < 3; ++a) surf.vertices[i][a] = positions[3 * i + a];
            surf.opacity[i] = std::clamp(surf.opacity[i], 0.0, 1.0);
        }
    }
    return result;
}

namespace {

std::vector<DepthMap> plane_sweep_depths(const std::vector<FeatureMap>& features, const std::vector<Camera>& cams,
                                         std::span<const double> hypotheses, double temperature) {
    std::vector<DepthMap> out;
    for (std::size_t ref = 0; ref < cams.size(); ++ref) {
        out.push_back(regress_depth(build_cost_volume(features, cams, static_cast<int>(ref), hypotheses), temperature));
    }
    return out;
}

}  // namespace

TriangleSurface init_surface_from_depth(const ViewSet& inputs, double near, double far, const TrainConfig& cfg) {
    cfg.validate();
    const auto cams = inputs.cameras();
    std::vector<FeatureMap> features;
    for (const View& v : inputs.views) features.push_back(extract_features(v.image, cfg.downsample));
    const auto hyps = sample_depth_hypotheses(near, far, cfg.depth_hypotheses);
    const auto depths = plane_sweep_depths(features, cams, hyps, cfg.temperature);

    const std::size_t n = depths.size() * depths[0].depth.size();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> opacity(n);
    Eigen::MatrixXd sh = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 3 * cfg.sh_size);
    std::vector<double> coeffs(3 * cfg.sh_size);
    for (std::size_t i = 0; i < n; ++i) {
        opacity[i] = 0.2 + 0.6 * unit(rng);
        const Rgb rgb{unit(rng), unit(rng), unit(rng)};
        sh_from_rgb(rgb, cfg.sh_size, coeffs);
        for (int j = 0; j < 3 * cfg.sh_size; ++j) sh(static_cast<Eigen::Index>(i), j) = coeffs[j];
    }
    return assemble_surface(depths, cams, opacity, sh, cfg.sh_size);
}

// ---------------------------------------------------------------------------

ScoreCalibration ScoreCalibration::identity(int hypotheses) {
    ScoreCalibration c;
    c.bias.assign(static_cast<std::size_t>(hypotheses), 0.0);
    return c;
}

CostVolume ScoreCalibration::apply(const CostVolume& cv) const {
    require(bias.size() == cv.depths.size(), ErrorCode::ShapeMismatch, "calibration size differs from volume");
    CostVolume out = cv;
    const std::size_t d = bias.size();
    for (std::size_t i = 0; i < out.scores.size(); ++i) out.scores[i] = gain * cv.scores[i] + bias[i % d];
    return out;
}

FeedForwardModel FeedForwardModel::create(const TrainConfig& cfg) {
    cfg.validate();
    FeedForwardModel m;
    m.head = TriangleHeadParams::random(kHeadInputs, cfg.hidden, 1 + 3 * cfg.sh_size, cfg.seed);
    m.calibration = ScoreCalibration::identity(cfg.depth_hypotheses);
    // zero output layer: the branch starts as the identity on depth
    m.refine = TriangleHeadParams::random(kHeadInputs, cfg.refine_hidden, 1, cfg.seed ^ 0x7e41eULL);
    m.refine.w3.setZero();
    m.depth_hypotheses = cfg.depth_hypotheses;
    m.downsample = cfg.downsample;
    m.sh_size = cfg.sh_size;
    m.temperature = cfg.temperature;
    return m;
}

std::size_t FeedForwardModel::parameter_count() const {
    return head.parameter_count() + 1 + calibration.bias.size() + refine.parameter_count();
}

std::vector<double> FeedForwardModel::pack() const {
    std::vector<double> flat = head.pack();
    flat.push_back(calibration.gain);
    flat.insert(flat.end(), calibration.bias.begin(), calibration.bias.end());
    const std::vector<double> r = refine.pack();
    flat.insert(flat.end(), r.begin(), r.end());
    return flat;
}

void FeedForwardModel::unpack(std::span<const double> flat) {
    require(flat.size() == parameter_count(), ErrorCode::ShapeMismatch, "model parameter count mismatch");
    const std::size_t nh = head.parameter_count();
    head.unpack(flat.subspan(0, nh));
    calibration.gain = flat[nh];
    const std::size_t d = calibration.bias.size();
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(nh + 1), flat.begin() + static_cast<std::ptrdiff_t>(nh + 1 + d),
              calibration.bias.begin());
    refine.unpack(flat.subspan(nh + 1 + d));
}

namespace {

constexpr char kModelMagic[8] = {'T', 'S', 'F', 'F', 'M', 'D', 'L', '2'};

}  // namespace

void FeedForwardModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoFailure, "cannot open '" + path.string() + "' for writing");
    auto put_i32 = [&](std::int32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
    out.write(kModelMagic, sizeof(kModelMagic));
    put_i32(depth_hypotheses);
    put_i32(downsample);
    put_i32(sh_size);
    put_i32(head.input_size());
    put_i32(static_cast<std::int32_t>(head.w1.cols()));
    put_i32(head.output_size());
    put_i32(static_cast<std::int32_t>(refine.w1.cols()));
    out.write(reinterpret_cast<const char*>(&temperature), sizeof(double));
    const std::vector<double> flat = pack();
    const std::uint64_t count = flat.size();
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!out) fail(ErrorCode::IoFailure, "write failed for '" + path.string() + "'");
}

FeedForwardModel FeedForwardModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoFailure, "cannot open '" + path.string() + "' for reading");
    auto bad = [&](const std::string& what) { fail(ErrorCode::ParseError, path.string() + ": " + what); };
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) bad("not a model file");
    std::int32_t header[7];
    double temperature = 0.0;
    std::uint64_t count = 0;
    if (!in.read(reinterpret_cast<char*>(header), sizeof(header)) ||
        !in.read(reinterpret_cast<char*>(&temperature), sizeof(temperature)) ||
        !in.read(reinterpret_cast<char*>(&count), sizeof(count))) {
        bad("truncated header");
    }
    const auto [d, s, d_h, in_size, hidden, out_size, refine_hidden] =
        std::tuple{header[0], header[1], header[2], header[3], header[4], header[5], header[6]};
    if (d < 2 || s < 1 || !valid_sh_size(d_h) || in_size != kHeadInputs || hidden < 1 || out_size != 1 + 3 * d_h ||
        refine_hidden < 1 || !(temperature > 0.0)) {
        bad("inconsistent header");
    }
    FeedForwardModel m;
    m.head = TriangleHeadParams::zeros(in_size, hidden, out_size);
    m.calibration = ScoreCalibration::identity(d);
    m.refine = TriangleHeadParams::zeros(in_size, refine_hidden, 1);
    m.depth_hypotheses = d;
    m.downsample = s;
    m.sh_size = d_h;
    m.temperature = temperature;
    if (count != m.parameter_count()) bad("parameter count does not match header");
    std::vector<double> flat(count);
    if (!in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
        bad("truncated parameters");
    }
    if (in.peek() != std::char_traits<char>::eof()) bad("trailing bytes");
    m.unpack(flat);
    return m;
}

PreparedScene prepare_scene(const ViewSet& inputs, double near, double far, const FeedForwardModel& model) {
    require(inputs.views.size() >= 2, ErrorCode::TooFewViews, "feed-forward reconstruction needs >= 2 input views");
    PreparedScene ps;
    ps.cams = inputs.cameras();
    ps.near = near;
    ps.far = far;
    for (const View& v : inputs.views) {
        ps.features.push_back(extract_features(v.image, model.downsample));
        ps.block_rgb.push_back(downsample_mean(v.image, model.downsample));
    }
    const auto hyps = sample_depth_hypotheses(near, far, model.depth_hypotheses);
    for (std::size_t ref = 0; ref < ps.cams.size(); ++ref) {
        ps.raw_volumes.push_back(build_cost_volume(ps.features, ps.cams, static_cast<int>(ref), hyps));
    }
    ps.background = mean_color(inputs);
    ps.cloud = inputs.cloud ? &*inputs.cloud : nullptr;
    return ps;
}

ForwardState feedforward(const FeedForwardModel& model, const PreparedScene& scene) {
    ForwardState st;
    for (const CostVolume& raw : scene.raw_volumes) {
        st.volumes.push_back(model.calibration.apply(raw));
        st.depths.push_back(regress_depth(st.volumes.back(), model.temperature));
    }
    const int w = st.depths[0].width;
    const int h = st.depths[0].height;
    const std::size_t per_view = static_cast<std::size_t>(w) * h;
    const auto n = static_cast<Eigen::Index>(per_view * st.depths.size());
    Eigen::MatrixXd fused(n, kHeadInputs);
    const double range = scene.far - scene.near;
    for (std::size_t v = 0; v < st.depths.size(); ++v) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                const auto row = static_cast<Eigen::Index>(v * per_view + p);
                const auto f = scene.features[v].at(x, y);
                for (int c = 0; c < kFeatureChannels; ++c) fused(row, c) = f[c];
                fused(row, kFeatureChannels) = (st.depths[v].depth[p] - scene.near) / range;
                for (int c = 0; c < 3; ++c) fused(row, kFeatureChannels + 1 + c) = scene.block_rgb[v].at(x, y, c);
            }
        }
    }
    st.head = decode_vertices(fused, model.head, model.sh_size);
    st.refine = mlp_forward(fused, model.refine);
    st.refined = st.depths;
    for (std::size_t v = 0; v < st.depths.size(); ++v) {
        for (std::size_t p = 0; p < per_view; ++p) {
            const double r = st.refine.out(static_cast<Eigen::Index>(v * per_view + p), 0);
            st.refined[v].depth[p] = st.depths[v].depth[p] * std::exp(kRefineScale * std::tanh(r));
        }
    }
    const std::vector<double> opacity(st.head.opacity.data(), st.head.opacity.data() + st.head.opacity.size());
    st.surface = assemble_surface(st.refined, scene.cams, opacity, st.head.sh, model.sh_size);
    return st;
}

std::vector<double> feedforward_backward(const FeedForwardModel& model, const PreparedScene& scene,
                                         const ForwardState& state, const SurfaceGradients& grad) {
    const auto n = static_cast<Eigen::Index>(state.surface.num_vertices());
    const int dsh = 3 * model.sh_size;
    require(grad.opacity.size() == static_cast<std::size_t>(n) && grad.sh.size() == static_cast<std::size_t>(n * dsh) &&
                grad.vertices.size() == static_cast<std::size_t>(n),
            ErrorCode::ShapeMismatch, "surface gradient does not match the forward state");
    Eigen::VectorXd g_opacity = Eigen::Map<const Eigen::VectorXd>(grad.opacity.data(), n);
    Eigen::MatrixXd g_sh(n, dsh);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int j = 0; j < dsh; ++j) g_sh(i, j) = grad.sh[static_cast<std::size_t>(i * dsh + j)];
    }
    const HeadGradients hg = decode_vertices_backward(model.head, state.head.cache, g_opacity, g_sh);

    std::vector<double> flat = hg.params.pack();
    flat.push_back(0.0);
    const std::size_t gain_slot = flat.size() - 1;
    flat.resize(flat.size() + model.calibration.bias.size(), 0.0);
    const std::size_t d = model.calibration.bias.size();

    const double range = scene.far - scene.near;
    const int w = state.depths[0].width;
    const int h = state.depths[0].height;
    const std::size_t per_view = static_cast<std::size_t>(w) * h;
    const int s = model.downsample;

    // d loss / d refined depth, then through the refinement branch
    std::vector<double> g_refined(static_cast<std::size_t>(n));
    Eigen::MatrixXd g_r(n, 1);
    for (std::size_t v = 0; v < state.depths.size(); ++v) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                const std::size_t i = v * per_view + p;
                const Vec3 ray = scene.cams[v].ray_direction(block_center(x, y, s));
                g_refined[i] = grad.vertices[i].dot(ray);
                const double t = std::tanh(state.refine.out(static_cast<Eigen::Index>(i), 0));
                g_r(static_cast<Eigen::Index>(i), 0) =
                    g_refined[i] * state.refined[v].depth[p] * kRefineScale * (1.0 - t * t);
            }
        }
    }
    const HeadGradients rg = mlp_backward(model.refine, state.refine, g_r);

    for (std::size_t v = 0; v < state.depths.size(); ++v) {
        std::vector<double> g_depth(per_view);
        for (std::size_t p = 0; p < per_view; ++p) {
            const std::size_t i = v * per_view + p;
            const auto row = static_cast<Eigen::Index>(i);
            const double factor = std::exp(kRefineScale * std::tanh(state.refine.out(row, 0)));
            g_depth[p] = g_refined[i] * factor +
                         (hg.input(row, kFeatureChannels) + rg.input(row, kFeatureChannels)) / range;
        }
        const std::vector<double> g_scores = regress_depth_backward(state.volumes[v], model.temperature, g_depth);
        const CostVolume& raw = scene.raw_volumes[v];
        for (std::size_t q = 0; q < g_scores.size(); ++q) {
            flat[gain_slot] += g_scores[q] * raw.scores[q];
            flat[gain_slot + 1 + q % d] += g_scores[q];
        }
    }
    const std::vector<double> r = rg.params.pack();
    flat.insert(flat.end(), r.begin(), r.end());
    return flat;
}

TriangleSurface predict_surface(const FeedForwardModel& model, const ViewSet& inputs, double near, double far) {
    const PreparedScene ps = prepare_scene(inputs, near, far, model);
    return feedforward(model, ps).surface;
}

TrainingScene training_scene(const Scene& scene) {
    return {scene.inputs, scene.targets, scene.spec.near, scene.spec.far};
}

FeedForwardResult train_feedforward(std::span<const TrainingScene> scenes, const FeedForwardModel& init,
                                    const TrainConfig& cfg, const StepCallback& on_step) {
    cfg.validate();
    require(!scenes.empty(), ErrorCode::InvalidArgument, "train_feedforward needs at least one scene");
    std::vector<PreparedScene> prepared;
    prepared.reserve(scenes.size());
    for (const TrainingScene& sc : scenes) {
        require(!sc.targets.views.empty(), ErrorCode::InvalidArgument, "training scene without target views");
        prepared.push_back(prepare_scene(sc.inputs, sc.near, sc.far, init));
        prepared.back().targets = &sc.targets;
    }

    FeedForwardResult result;
    result.model = init;
    std::vector<double> flat = init.pack();
    OptimizerState opt(flat.size(), AdamConfig{cfg.lr});
    const Schedule sched = cfg.schedule();
    std::mt19937_64 rng(cfg.seed);

    for (long step = 0; step < cfg.steps; ++step) {
        const PreparedScene& ps = prepared[rng() % prepared.size()];
        LossWeights weights = cfg.weights;
        weights.points = ps.cloud ? lambda_at(sched, step) : 0.0;
        const ForwardState st = feedforward(result.model, ps);
        SurfaceGradients g;
        const LossReport report = scene_loss(st.surface, *ps.targets, ps.background, ps.cloud, weights, cfg.alpha, &g);
        const std::vector<double> grad = feedforward_backward(result.model, ps, st, g);
        result.trace.push_back({step, report});
        if (on_step) on_step(result.trace.back());
        adam_step(opt, flat, grad);
        result.model.unpack(flat);
    }
    return result;
}

}  // namespace trisplat
