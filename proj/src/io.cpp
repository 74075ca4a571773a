#include "trisplat/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "trisplat/error.hpp"
#include "trisplat/sh.hpp"

namespace trisplat {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoFailure, "cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoFailure, "cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::IoFailure, "write failed for '" + path.string() + "'");
}

template <typename T>
void put(std::string& buf, T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    buf.append(bytes, sizeof(T));
}

/// Cursor over a byte buffer; every failure reports the byte offset.
class Reader {
public:
    Reader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

    [[noreturn]] void error(const std::string& what) const { error_at(pos_, what); }

    [[noreturn]] void error_at(std::size_t pos, const std::string& what) const {
        fail(ErrorCode::ParseError, name_ + ": " + what + " at byte " + std::to_string(pos));
    }

    std::string line() {
        const auto end = bytes_.find('\n', pos_);
        if (end == std::string::npos) error("unterminated header line");
        std::string out = bytes_.substr(pos_, end - pos_);
        pos_ = end + 1;
        if (!out.empty() && out.back() == '\r') out.pop_back();
        return out;
    }

    std::string token() {
        while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
        const std::size_t start = pos_;
        while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
        if (start == pos_) error("unexpected end of header");
        return bytes_.substr(start, pos_ - start);
    }

    void skip_one_whitespace() {
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) error("expected whitespace");
        ++pos_;
    }

    template <typename T>
    T get() {
        if (bytes_.size() - pos_ < sizeof(T)) error("truncated data");
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    void expect_end() const {
        if (pos_ != bytes_.size()) error("trailing bytes");
    }

    std::size_t pos() const { return pos_; }

private:
    std::string bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

long parse_long(Reader& r, const std::string& tok) {
    try {
        std::size_t used = 0;
        const long v = std::stol(tok, &used);
        if (used != tok.size()) r.error("malformed integer '" + tok + "'");
        return v;
    } catch (const std::logic_error&) {
        r.error("malformed integer '" + tok + "'");
    }
}

double parse_double(Reader& r, const std::string& tok) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) r.error("malformed number '" + tok + "'");
        return v;
    } catch (const std::logic_error&) {
        r.error("malformed number '" + tok + "'");
    }
}

struct PfmHeader {
    int channels = 0;
    int width = 0;
    int height = 0;
};

PfmHeader read_pfm_header(Reader& r) {
    PfmHeader h;
    const std::string magic = r.token();
    if (magic == "Pf") h.channels = 1;
    else if (magic == "PF") h.channels = 3;
    else r.error("bad PFM magic '" + magic + "'");
    const long w = parse_long(r, r.token());
    const long hh = parse_long(r, r.token());
    if (w <= 0 || hh <= 0 || w > (1 << 20) || hh > (1 << 20)) r.error("bad PFM dimensions");
    const double scale = parse_double(r, r.token());
    if (!(scale < 0.0)) r.error("only little-endian PFM (negative scale) is supported");
    r.skip_one_whitespace();
    h.width = static_cast<int>(w);
    h.height = static_cast<int>(hh);
    return h;
}

std::string pfm_header(const char* magic, int w, int h) {
    return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
}

std::uint8_t quantize(double x) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(x, 0.0, 1.0)));
}

}  // namespace

void save_pfm(const DepthMap& depth, const fs::path& path) {
    std::string buf = pfm_header("Pf", depth.width, depth.height);
    for (int y = depth.height - 1; y >= 0; --y) {
        for (int x = 0; x < depth.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * depth.width + x;
            put(buf, depth.valid[i] ? static_cast<float>(depth.depth[i]) : 0.0f);
        }
    }
    write_file(path, buf);
}

DepthMap load_pfm(const fs::path& path) {
    Reader r(read_file(path), path.string());
    const PfmHeader h = read_pfm_header(r);
    if (h.channels != 1) r.error("expected a grayscale PFM");
    DepthMap out(h.width, h.height);
    for (int y = h.height - 1; y >= 0; --y) {
        for (int x = 0; x < h.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * h.width + x;
            const double v = r.get<float>();
            const bool ok = std::isfinite(v) && v > 0.0;
            out.depth[i] = ok ? v : 0.0;
            out.valid[i] = ok ? 1 : 0;
        }
    }
    r.expect_end();
    return out;
}

void save_pfm(const Image& image, const fs::path& path) {
    std::string buf = pfm_header("PF", image.width, image.height);
    for (int y = image.height - 1; y >= 0; --y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) put(buf, static_cast<float>(image.at(x, y, c)));
        }
    }
    write_file(path, buf);
}

Image load_pfm_color(const fs::path& path) {
    Reader r(read_file(path), path.string());
    const PfmHeader h = read_pfm_header(r);
    if (h.channels != 3) r.error("expected a color PFM");
    Image out(h.width, h.height);
    for (int y = h.height - 1; y >= 0; --y) {
        for (int x = 0; x < h.width; ++x) {
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = r.get<float>();
        }
    }
    r.expect_end();
    return out;
}

void write_png(const Image& image, const fs::path& path) {
    std::vector<std::uint8_t> bytes(image.data.size());
    std::transform(image.data.begin(), image.data.end(), bytes.begin(), quantize);
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        fail(ErrorCode::IoFailure, "cannot write PNG '" + path.string() + "': " + msg);
    }
}

Image read_png(const fs::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        const std::string msg = img.message;
        png_image_free(&img);
        fail(ErrorCode::ParseError, "cannot read PNG '" + path.string() + "': " + msg);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        fail(ErrorCode::ParseError, "cannot decode PNG '" + path.string() + "': " + msg);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height));
    for (std::size_t i = 0; i < bytes.size(); ++i) out.data[i] = bytes[i] / 255.0;
    return out;
}

MeshFormat mesh_format_from_path(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ply") return MeshFormat::Ply;
    if (ext == ".obj") return MeshFormat::Obj;
    fail(ErrorCode::InvalidArgument, "unknown mesh extension '" + ext + "' (expected .ply or .obj)");
}

namespace {

constexpr std::int64_t kMaxCount = std::numeric_limits<std::int32_t>::max();

std::string mesh_to_ply(const TriangleSurface& surf) {
    if (static_cast<std::int64_t>(surf.num_vertices()) > kMaxCount ||
        static_cast<std::int64_t>(surf.num_faces()) > kMaxCount) {
        fail(ErrorCode::UnrepresentableCount, "mesh too large for 32-bit PLY indices");
    }
    std::string buf;
    buf += "ply\nformat binary_little_endian 1.0\n";
    buf += "element vertex " + std::to_string(surf.num_vertices()) + "\n";
    buf += "property float x\nproperty float y\nproperty float z\n";
    buf += "property uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar alpha\n";
    buf += "element face " + std::to_string(surf.num_faces()) + "\n";
    buf += "property list uchar int vertex_indices\nend_header\n";
    const Vec3 plus_z(0.0, 0.0, 1.0);
    for (std::size_t i = 0; i < surf.num_vertices(); ++i) {
        const Vec3& p = surf.vertices[i];
        put(buf, static_cast<float>(p.x()));
        put(buf, static_cast<float>(p.y()));
        put(buf, static_cast<float>(p.z()));
        const ShColor col = eval_sh(surf.sh_of(i), surf.sh_size, plus_z);
        for (int c = 0; c < 3; ++c) put(buf, quantize(col.rgb[c]));
        put(buf, quantize(surf.opacity[i]));
    }
    for (const Face& f : surf.faces) {
        put(buf, std::uint8_t{3});
        for (int k = 0; k < 3; ++k) put(buf, static_cast<std::int32_t>(f[k]));
    }
    return buf;
}

std::string mesh_to_obj(const TriangleSurface& surf) {
    std::string buf = "# vertices " + std::to_string(surf.num_vertices()) + ", faces " +
                      std::to_string(surf.num_faces()) + "\n";
    char line[128];
    for (const Vec3& p : surf.vertices) {
        std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", round_to_float(p.x()), round_to_float(p.y()),
                      round_to_float(p.z()));
        buf += line;
    }
    for (const Face& f : surf.faces) {
        std::snprintf(line, sizeof(line), "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
        buf += line;
    }
    return buf;
}

/// Parses the header lines up to end_header, checking them against `expected`.
void expect_ply_header(Reader& r, const std::vector<std::string>& expected, std::vector<long>& counts) {
    for (const std::string& want : expected) {
        const std::size_t at = r.pos();
        const std::string got = r.line();
        if (want.rfind("element ", 0) == 0) {
            if (got.rfind(want, 0) != 0) r.error_at(at, "expected '" + want + "<count>'");
            const long n = parse_long(r, got.substr(want.size()));
            if (n < 0 || n > kMaxCount) r.error_at(at, "bad element count");
            counts.push_back(n);
        } else if (got != want) {
            r.error_at(at, "expected header line '" + want + "', got '" + got + "'");
        }
    }
}

TriangleSurface ply_to_mesh(Reader& r) {
    const std::vector<std::string> header = {"ply",
                                             "format binary_little_endian 1.0",
                                             "element vertex ",
                                             "property float x",
                                             "property float y",
                                             "property float z",
                                             "property uchar red",
                                             "property uchar green",
                                             "property uchar blue",
                                             "property uchar alpha",
                                             "element face ",
                                             "property list uchar int vertex_indices",
                                             "end_header"};
    std::vector<long> counts;
    expect_ply_header(r, header, counts);
    TriangleSurface surf;
    surf.sh_size = 1;
    const auto n = static_cast<std::size_t>(counts[0]);
    const auto t = static_cast<std::size_t>(counts[1]);
    surf.vertices.reserve(n);
    surf.opacity.reserve(n);
    surf.sh.reserve(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = r.get<float>();
        const double y = r.get<float>();
        const double z = r.get<float>();
        surf.vertices.emplace_back(x, y, z);
        Rgb rgb;
        for (int c = 0; c < 3; ++c) rgb[c] = r.get<std::uint8_t>() / 255.0;
        surf.opacity.push_back(r.get<std::uint8_t>() / 255.0);
        double coeffs[3];
        sh_from_rgb(rgb, 1, coeffs);
        surf.sh.insert(surf.sh.end(), coeffs, coeffs + 3);
    }
    surf.faces.reserve(t);
    for (std::size_t f = 0; f < t; ++f) {
        if (r.get<std::uint8_t>() != 3) r.error("only triangle faces are supported");
        Face face;
        for (int k = 0; k < 3; ++k) {
            face[k] = r.get<std::int32_t>();
            if (face[k] < 0 || static_cast<std::size_t>(face[k]) >= n) r.error("face index out of range");
        }
        surf.faces.push_back(face);
    }
    r.expect_end();
    return surf;
}

TriangleSurface obj_to_mesh(const std::string& text, const std::string& name) {
    TriangleSurface surf;
    surf.sh_size = 1;
    std::istringstream in(text);
    std::string line;
    std::size_t offset = 0;
    auto bad = [&](const std::string& what) {
        fail(ErrorCode::ParseError, name + ": " + what + " at byte " + std::to_string(offset));
    };
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            double x, y, z;
            if (!(ls >> x >> y >> z)) bad("malformed vertex");
            surf.vertices.push_back(round_to_float(Vec3(x, y, z)));
            surf.opacity.push_back(1.0);
            surf.sh.insert(surf.sh.end(), {0.0, 0.0, 0.0});
        } else if (tag == "f") {
            std::vector<std::int32_t> idx;
            std::string tok;
            while (ls >> tok) {
                long v = 0;
                try {
                    v = std::stol(tok.substr(0, tok.find('/')));
                } catch (const std::logic_error&) {
                    bad("malformed face index '" + tok + "'");
                }
                if (v < 0) v += static_cast<long>(surf.vertices.size()) + 1;
                if (v < 1 || v > static_cast<long>(surf.vertices.size())) bad("face index out of range");
                idx.push_back(static_cast<std::int32_t>(v - 1));
            }
            if (idx.size() < 3) bad("face with fewer than 3 vertices");
            // fan-triangulate polygons
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) surf.faces.push_back({idx[0], idx[k], idx[k + 1]});
        }
        offset += line.size() + 1;
    }
    return surf;
}

}  // namespace

void export_mesh(const TriangleSurface& surf, const fs::path& path, MeshFormat format) {
    surf.validate();
    write_file(path, format == MeshFormat::Ply ? mesh_to_ply(surf) : mesh_to_obj(surf));
}

TriangleSurface import_mesh(const fs::path& path) {
    if (mesh_format_from_path(path) == MeshFormat::Obj) return obj_to_mesh(read_file(path), path.string());
    Reader r(read_file(path), path.string());
    return ply_to_mesh(r);
}

void save_cloud(const PointCloud& cloud, const fs::path& path) {
    std::string buf = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(cloud.size()) +
                      "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
    for (const Vec3& p : cloud) {
        put(buf, p.x());
        put(buf, p.y());
        put(buf, p.z());
    }
    write_file(path, buf);
}

PointCloud load_cloud(const fs::path& path) {
    Reader r(read_file(path), path.string());
    std::vector<long> counts;
    expect_ply_header(r,
                      {"ply", "format binary_little_endian 1.0", "element vertex ", "property double x",
                       "property double y", "property double z", "end_header"},
                      counts);
    PointCloud cloud(static_cast<std::size_t>(counts[0]));
    for (Vec3& p : cloud) {
        for (int a = 0; a < 3; ++a) p[a] = r.get<double>();
        if (!p.allFinite()) r.error("non-finite point");
    }
    r.expect_end();
    return cloud;
}

nlohmann::json camera_to_json(const Camera& cam) {
    nlohmann::json j;
    j["width"] = cam.intrinsics.width;
    j["height"] = cam.intrinsics.height;
    j["fx"] = cam.intrinsics.fx;
    j["fy"] = cam.intrinsics.fy;
    j["cx"] = cam.intrinsics.cx;
    j["cy"] = cam.intrinsics.cy;
    auto& R = j["R"] = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) R.push_back(cam.pose.R(r, c));
    }
    j["t"] = {cam.pose.t.x(), cam.pose.t.y(), cam.pose.t.z()};
    return j;
}

Camera camera_from_json(const nlohmann::json& j) {
    Camera cam;
    try {
        cam.intrinsics.width = j.at("width").get<int>();
        cam.intrinsics.height = j.at("height").get<int>();
        cam.intrinsics.fx = j.at("fx").get<double>();
        cam.intrinsics.fy = j.at("fy").get<double>();
        cam.intrinsics.cx = j.at("cx").get<double>();
        cam.intrinsics.cy = j.at("cy").get<double>();
        const auto& R = j.at("R");
        const auto& t = j.at("t");
        if (R.size() != 9 || t.size() != 3) fail(ErrorCode::ParseError, "camera: R needs 9 and t needs 3 entries");
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) cam.pose.R(r, c) = R.at(r * 3 + c).get<double>();
            cam.pose.t[r] = t.at(r).get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, std::string("camera: ") + e.what());
    }
    cam.validate();
    return cam;
}

void save_camera(const Camera& cam, const fs::path& path) { write_text(path, camera_to_json(cam).dump(2) + "\n"); }

Camera load_camera(const fs::path& path) { return camera_from_json(read_json(path)); }

nlohmann::json read_json(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, text); }

namespace {

std::string view_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "view_%02zu", i);
    return buf;
}

}  // namespace

void save_scene(const Scene& scene, const fs::path& dir) {
    std::error_code ec;
    for (const char* sub : {"images", "cameras", "depth"}) {
        fs::create_directories(dir / sub, ec);
        if (ec) fail(ErrorCode::IoFailure, "cannot create '" + (dir / sub).string() + "': " + ec.message());
    }
    write_text(dir / "spec.json", to_json(scene.spec).dump(2) + "\n");
    std::size_t i = 0;
    for (const ViewSet* set : {&scene.inputs, &scene.targets}) {
        for (const View& v : set->views) {
            const std::string name = view_name(i++);
            write_png(v.image, dir / "images" / (name + ".png"));
            save_pfm(v.image, dir / "images" / (name + ".pfm"));
            save_camera(v.camera, dir / "cameras" / (name + ".json"));
            if (v.depth) save_pfm(*v.depth, dir / "depth" / (name + ".pfm"));
        }
    }
    if (scene.inputs.cloud) save_cloud(*scene.inputs.cloud, dir / "cloud.ply");
    export_mesh(scene.mesh, dir / "mesh.ply", MeshFormat::Ply);
}

Scene load_scene(const fs::path& dir) {
    Scene scene;
    scene.spec = scene_spec_from_json(read_json(dir / "spec.json"));
    const auto n_in = static_cast<std::size_t>(scene.spec.rig.inputs);
    const auto n_total = n_in + static_cast<std::size_t>(scene.spec.rig.targets);
    for (std::size_t i = 0; i < n_total; ++i) {
        const std::string name = view_name(i);
        View v;
        v.image = load_pfm_color(dir / "images" / (name + ".pfm"));
        v.camera = load_camera(dir / "cameras" / (name + ".json"));
        const fs::path depth = dir / "depth" / (name + ".pfm");
        if (fs::exists(depth)) v.depth = load_pfm(depth);
        (i < n_in ? scene.inputs : scene.targets).views.push_back(std::move(v));
    }
    if (fs::exists(dir / "cloud.ply")) scene.inputs.cloud = load_cloud(dir / "cloud.ply");
    if (fs::exists(dir / "mesh.ply")) scene.mesh = import_mesh(dir / "mesh.ply");
    return scene;
}

}  // namespace trisplat
