#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "trisplat/depthvol.hpp"
#include "trisplat/image.hpp"
#include "trisplat/surface.hpp"

namespace trisplat {

struct TextureSpec {
    enum class Kind { Solid, Checker, Noise };
    Kind kind = Kind::Checker;
    double cell = 0.25;  ///< checker cell size / noise lattice spacing (scene units)
    Rgb color_a{0.9, 0.9, 0.9};
    Rgb color_b{0.1, 0.1, 0.1};
    std::uint64_t seed = 0;
};

struct PrimitiveSpec {
    enum class Kind { Plane, Box };
    Kind kind = Kind::Plane;
    // plane: center plus two half-extent vectors spanning it
    Vec3 center = Vec3(0.0, 0.0, 3.0);
    Vec3 axis_u = Vec3(1.0, 0.0, 0.0);
    Vec3 axis_v = Vec3(0.0, 1.0, 0.0);
    // box: axis-aligned corners
    Vec3 min_corner = Vec3::Zero();
    Vec3 max_corner = Vec3::Zero();
    TextureSpec texture;
    int tessellation = 32;  ///< quads per side
};

/// Cameras on a horizontal line through the origin: input views at
/// x = +-baseline/2, target views evenly spaced strictly between them.
struct RigSpec {
    int inputs = 2;
    int targets = 3;
    double baseline = 0.3;
    std::optional<Vec3> look_at;  ///< none: all cameras fronto-parallel (identity rotation)
    int width = 64;
    int height = 64;
    double focal = 64.0;
};

struct SceneSpec {
    std::vector<PrimitiveSpec> primitives;
    RigSpec rig;
    double near = 1.0;
    double far = 5.0;
    int downsample = 4;
    double cloud_noise = 0.0;  ///< Gaussian sigma added to the supervision cloud
    std::uint64_t seed = 0;
};

struct View {
    Image image;
    Camera camera;
    std::optional<DepthMap> depth;
};

struct ViewSet {
    std::vector<View> views;
    std::optional<PointCloud> cloud;  ///< index-aligned with the low-resolution vertex grid

    [[nodiscard]] std::vector<Camera> cameras() const;
};

/// A generated scene: reconstruction inputs, held-out targets and the mesh
/// that produced both.
struct Scene {
    SceneSpec spec;
    ViewSet inputs;
    ViewSet targets;
    TriangleSurface mesh;
};

std::vector<Camera> rig_cameras(const RigSpec& rig);

/// Opaque, DC-colored triangle mesh of all primitives (float32-exact positions,
/// colors on the 1/255 grid so PLY export is lossless).
TriangleSurface scene_mesh(const SceneSpec& spec);

/// Front-most ray hit depth (camera-frame z) at a continuous pixel, if any.
std::optional<double> cast_depth(const TriangleSurface& mesh, const Camera& cam, const Vec2& pixel);

/// Supervision cloud: true depth back-projected at every low-resolution pixel
/// center of every view, view-major then row-major.
PointCloud ground_truth_cloud(const TriangleSurface& mesh, std::span<const Camera> cams, int s, double far,
                              double noise_sigma, std::uint64_t seed);

Scene gen_scene(const SceneSpec& spec);

enum class SceneKind { Plane, Box };
/// Procedural desk-scale scenes: a textured backdrop plane, plus a textured
/// box in front of it for SceneKind::Box.
SceneSpec random_scene_spec(std::uint64_t seed, SceneKind kind);

struct ViewScore {
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<ViewScore> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

EvalReport eval_views(const TriangleSurface& surface, const ViewSet& targets, const Rgb& bg = {0.0, 0.0, 0.0});

/// Per-channel mean color image of `gt`, the constant-image baseline.
Image constant_mean_image(const Image& gt);

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalReport& report);

}  // namespace trisplat
