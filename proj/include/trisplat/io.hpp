#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "trisplat/depthvol.hpp"
#include "trisplat/harness.hpp"
#include "trisplat/image.hpp"
#include "trisplat/surface.hpp"

namespace trisplat {

// Formats are documented byte-for-byte in docs/formats.md.

/// Grayscale PFM ("Pf"), little-endian (scale -1.0), rows bottom-up. Invalid
/// depth entries are stored as 0 and loaded back as invalid.
void save_pfm(const DepthMap& depth, const std::filesystem::path& path);
DepthMap load_pfm(const std::filesystem::path& path);

/// Color PFM ("PF") holding a lossless float32 image.
void save_pfm(const Image& image, const std::filesystem::path& path);
Image load_pfm_color(const std::filesystem::path& path);

/// 8-bit RGB PNG, channel value round(255 * clamp(x, 0, 1)).
void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

enum class MeshFormat { Ply, Obj };
MeshFormat mesh_format_from_path(const std::filesystem::path& path);

void export_mesh(const TriangleSurface& surf, const std::filesystem::path& path, MeshFormat format);
TriangleSurface import_mesh(const std::filesystem::path& path);

/// Point cloud as a vertex-only binary PLY with float64 coordinates (lossless).
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud load_cloud(const std::filesystem::path& path);

nlohmann::json camera_to_json(const Camera& cam);
Camera camera_from_json(const nlohmann::json& j);
void save_camera(const Camera& cam, const std::filesystem::path& path);
Camera load_camera(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Scene directory: spec.json, images/view_XX.{png,pfm}, cameras/view_XX.json,
/// depth/view_XX.pfm, cloud.ply (input-view supervision cloud), mesh.ply.
/// Views are numbered inputs first, then targets.
void save_scene(const Scene& scene, const std::filesystem::path& dir);
Scene load_scene(const std::filesystem::path& dir);

}  // namespace trisplat
