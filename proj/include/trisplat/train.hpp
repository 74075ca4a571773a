#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "trisplat/depthvol.hpp"
#include "trisplat/harness.hpp"
#include "trisplat/losses.hpp"
#include "trisplat/raster.hpp"
#include "trisplat/surface.hpp"

namespace trisplat {

/// Point-loss weight decay: max(lambda0 exp(-step / tau), lambda_min).
struct Schedule {
    double lambda0 = 1.0;
    double lambda_min = 0.01;
    double tau = 1.0;
    long total_steps = 0;

    /// tau = 0.25 total_steps (at least 1).
    static Schedule for_steps(long total_steps, double lambda0 = 1.0, double lambda_min = 0.01);
    void validate() const;
};

double lambda_at(const Schedule& sched, long step);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerState {
    AdamConfig config;
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;

    OptimizerState() = default;
    OptimizerState(std::size_t size, const AdamConfig& cfg) : config(cfg), m(size, 0.0), v(size, 0.0) {}
};

/// Bias-corrected Adam update in place. A non-finite gradient throws
/// NonFiniteGradient before anything (params or moments) is touched.
void adam_step(OptimizerState& state, std::span<double> params, std::span<const double> grads);

/// Everything the CLI config file can set. Unknown keys are rejected.
struct TrainConfig {
    long steps = 2000;
    double lr = 1e-3;             ///< feed-forward parameters
    double lr_positions = 1e-4;   ///< per-scene vertex positions
    double lr_attributes = 1e-2;  ///< per-scene opacity and SH
    LossWeights weights;          ///< points slot ignored, the schedule drives it
    double lambda0 = 1.0;
    double lambda_min = 0.01;
    std::optional<double> tau;  ///< default 0.25 steps
    int depth_hypotheses = 32;
    int downsample = 2;
    int sh_size = 1;
    double temperature = 0.05;
    double alpha = 0.95;
    int hidden = 64;
    int refine_hidden = 16;
    std::uint64_t seed = 0;

    [[nodiscard]] Schedule schedule() const;
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TraceRecord {
    long step = 0;
    LossReport report;
};

using Trace = std::vector<TraceRecord>;

/// JSON lines, one per record.
std::string trace_jsonl(const Trace& trace);

/// Per-channel mean over all pixels of all views.
Rgb mean_color(const ViewSet& views);

// ---------------------------------------------------------------------------
// Per-scene optimization

struct OptimizeResult {
    TriangleSurface surface;  ///< best on training loss
    Trace trace;
    long best_step = -1;  ///< -1 when no step ran
};

/// Loss of a surface against a set of views: photometric terms averaged over
/// views plus the weighted point term. Gradients land in `grad` when given.
LossReport scene_loss(const TriangleSurface& surf, const ViewSet& views, const Rgb& bg, const PointCloud* gt_cloud,
                      const LossWeights& weights, double alpha, SurfaceGradients* grad);

/// Directly optimizes positions, opacity and SH against `views` with three Adam
/// groups. Opacity is clamped to [0, 1] after each step.
OptimizeResult optimize_scene(const ViewSet& views, const TriangleSurface& init, const PointCloud* gt_cloud,
                              const TrainConfig& cfg, const Rgb& bg = {0.0, 0.0, 0.0});

/// Pixel-aligned surface with geometry from plane-sweep depth of the input
/// views and random opacity / colors (seeded).
TriangleSurface init_surface_from_depth(const ViewSet& inputs, double near, double far, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Feed-forward model

/// Learnable affine map applied to raw correlation scores before the softmax:
/// score' = gain score + bias[k]. Gives the geometry branch parameters that the
/// point loss can act on.
struct ScoreCalibration {
    double gain = 1.0;
    std::vector<double> bias;

    static ScoreCalibration identity(int hypotheses);
    [[nodiscard]] CostVolume apply(const CostVolume& cv) const;
};

/// Head input per low-resolution pixel: feature (14), depth normalized to
/// [0, 1] over [near, far] (1), block-mean RGB (3).
inline constexpr int kHeadInputs = kFeatureChannels + 4;

/// Largest relative depth change the refinement branch can make:
/// depth' = depth exp(kRefineScale tanh(r)).
inline constexpr double kRefineScale = 0.1;

struct FeedForwardModel {
    TriangleHeadParams head;
    ScoreCalibration calibration;
    /// Per-pixel depth refinement, same inputs as the head, one output r.
    TriangleHeadParams refine;
    int depth_hypotheses = 32;
    int downsample = 2;
    int sh_size = 1;
    double temperature = 0.05;

    static FeedForwardModel create(const TrainConfig& cfg);

    [[nodiscard]] std::vector<double> pack() const;
    void unpack(std::span<const double> flat);
    [[nodiscard]] std::size_t parameter_count() const;

    void save(const std::filesystem::path& path) const;
    static FeedForwardModel load(const std::filesystem::path& path);
};

/// Per-scene quantities that do not depend on model parameters.
struct PreparedScene {
    std::vector<Camera> cams;
    std::vector<FeatureMap> features;
    std::vector<Image> block_rgb;
    std::vector<CostVolume> raw_volumes;
    double near = 1.0;
    double far = 2.0;
    Rgb background{};
    const ViewSet* targets = nullptr;
    const PointCloud* cloud = nullptr;
};

PreparedScene prepare_scene(const ViewSet& inputs, double near, double far, const FeedForwardModel& model);

struct ForwardState {
    std::vector<CostVolume> volumes;  ///< calibrated
    std::vector<DepthMap> depths;     ///< regressed
    std::vector<DepthMap> refined;    ///< after the refinement branch
    HeadCache refine;
    HeadOutput head;
    TriangleSurface surface;
};

ForwardState feedforward(const FeedForwardModel& model, const PreparedScene& scene);

/// Chains d loss / d surface back to the model parameters (flat, pack order).
std::vector<double> feedforward_backward(const FeedForwardModel& model, const PreparedScene& scene,
                                         const ForwardState& state, const SurfaceGradients& grad);

TriangleSurface predict_surface(const FeedForwardModel& model, const ViewSet& inputs, double near, double far);

struct TrainingScene {
    ViewSet inputs;
    ViewSet targets;
    double near = 1.0;
    double far = 5.0;
};

TrainingScene training_scene(const Scene& scene);

struct FeedForwardResult {
    FeedForwardModel model;
    Trace trace;
};

/// Step callback, mainly for progress output; receives each new trace record.
using StepCallback = std::function<void(const TraceRecord&)>;

FeedForwardResult train_feedforward(std::span<const TrainingScene> scenes, const FeedForwardModel& init,
                                    const TrainConfig& cfg, const StepCallback& on_step = {});

}  // namespace trisplat
