#include "trisplat/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "trisplat/error.hpp"
#include "trisplat/gradcheck.hpp"
#include "trisplat/harness.hpp"
#include "trisplat/io.hpp"
#include "trisplat/parallel.hpp"
#include "trisplat/raster.hpp"
#include "trisplat/train.hpp"

namespace trisplat {

namespace fs = std::filesystem;

namespace {

TrainConfig load_config(const std::string& path) {
    if (path.empty()) return TrainConfig{};
    return train_config_from_json(read_json(path));
}

Rgb parse_rgb(const std::vector<double>& v) {
    if (v.size() != 3) fail(ErrorCode::InvalidArgument, "--background needs three values");
    return {v[0], v[1], v[2]};
}

/// Reconstructions render over the mean color of the scene's input views.
Rgb scene_background(const Scene& scene) { return mean_color(scene.inputs); }

nlohmann::json eval_json(const EvalReport& report, const Rgb& bg) {
    nlohmann::json j = to_json(report);
    j["background"] = {bg[0], bg[1], bg[2]};
    return j;
}

std::vector<fs::path> dataset_scenes(const fs::path& dir) {
    std::vector<fs::path> scenes;
    if (!fs::is_directory(dir)) fail(ErrorCode::IoFailure, "dataset '" + dir.string() + "' is not a directory");
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "spec.json")) scenes.push_back(entry.path());
    }
    std::sort(scenes.begin(), scenes.end());
    if (scenes.empty()) fail(ErrorCode::IoFailure, "dataset '" + dir.string() + "' holds no scene directories");
    return scenes;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Feed-forward triangle-splat reconstruction toolkit", "trisplat"};
    app.require_subcommand(1);
    unsigned threads = 0;
    app.add_option("--threads", threads, "worker threads (0 = all cores)");

    // gen-scene
    auto* gen = app.add_subcommand("gen-scene", "generate a synthetic scene directory");
    std::string gen_spec, gen_out, gen_random;
    std::uint64_t gen_seed = 0;
    int gen_count = 1;
    gen->add_option("--spec", gen_spec, "scene spec JSON");
    gen->add_option("--random", gen_random, "procedural scene kind instead of --spec")
        ->check(CLI::IsMember({"plane", "box", "mixed"}));
    gen->add_option("--seed", gen_seed, "seed for --random");
    gen->add_option("--count", gen_count, "with --random: write scene_000.. subdirectories")->check(CLI::PositiveNumber);
    gen->add_option("--out", gen_out, "output directory")->required();

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "reconstruct a mesh from a scene's input views");
    std::string rec_mode, rec_scene, rec_model, rec_config, rec_out, rec_metrics;
    rec->add_option("--mode", rec_mode, "optimize | feedforward")
        ->required()
        ->check(CLI::IsMember({"optimize", "feedforward"}));
    rec->add_option("--scene", rec_scene, "scene directory")->required();
    rec->add_option("--model", rec_model, "trained model (feedforward mode)");
    rec->add_option("--config", rec_config, "config JSON");
    rec->add_option("--out", rec_out, "output mesh (.ply or .obj)")->required();
    rec->add_option("--metrics", rec_metrics, "JSON-lines metrics trace");

    // render
    auto* ren = app.add_subcommand("render", "render a mesh from a camera");
    std::string ren_mesh, ren_camera, ren_out;
    std::vector<double> ren_bg{0.0, 0.0, 0.0};
    ren->add_option("--mesh", ren_mesh, "mesh file")->required();
    ren->add_option("--camera", ren_camera, "camera JSON")->required();
    ren->add_option("--out", ren_out, "output image (.png or .pfm)")->required();
    ren->add_option("--background", ren_bg, "background r g b")->expected(3);

    // eval
    auto* ev = app.add_subcommand("eval", "score a mesh against a scene's target views");
    std::string ev_mesh, ev_targets, ev_out;
    std::vector<double> ev_bg;
    ev->add_option("--mesh", ev_mesh, "mesh file")->required();
    ev->add_option("--targets", ev_targets, "scene directory")->required();
    ev->add_option("--out", ev_out, "report JSON (default: stdout)");
    ev->add_option("--background", ev_bg, "background r g b (default: mean input color)")->expected(3);

    // export
    auto* ex = app.add_subcommand("export", "convert a mesh between PLY and OBJ");
    std::string ex_mesh, ex_format, ex_out;
    ex->add_option("--mesh", ex_mesh, "input mesh")->required();
    ex->add_option("--format", ex_format, "ply | obj")->required()->check(CLI::IsMember({"ply", "obj"}));
    ex->add_option("--out", ex_out, "output mesh")->required();

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "finite-difference check of the analytic gradients");
    std::string gc_component = "all", gc_out;
    std::uint64_t gc_seed = 7;
    int gc_probes = 0;
    gc->add_option("--component", gc_component, "raster | losses | depthvol | head | end-to-end | all")
        ->check(CLI::IsMember({"raster", "losses", "depthvol", "head", "end-to-end", "all"}));
    gc->add_option("--seed", gc_seed, "seed");
    gc->add_option("--probes", gc_probes, "probes per component (0 = defaults)");
    gc->add_option("--out", gc_out, "also write the JSON report here");

    // train
    auto* tr = app.add_subcommand("train", "train the feed-forward model on a dataset of scenes");
    std::string tr_dataset, tr_config, tr_out, tr_metrics;
    tr->add_option("--dataset", tr_dataset, "directory of scene directories")->required();
    tr->add_option("--config", tr_config, "config JSON");
    tr->add_option("--out", tr_out, "model file")->required();
    tr->add_option("--metrics", tr_metrics, "JSON-lines metrics trace");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        set_num_threads(threads);

        if (*gen) {
            if (gen_spec.empty() == gen_random.empty()) {
                err << "error: gen-scene needs exactly one of --spec or --random\n\n" << gen->help();
                return kExitUsage;
            }
            if (!gen_spec.empty()) {
                save_scene(gen_scene(scene_spec_from_json(read_json(gen_spec))), gen_out);
                return kExitOk;
            }
            for (int i = 0; i < gen_count; ++i) {
                const std::uint64_t seed = gen_seed + static_cast<std::uint64_t>(i);
                SceneKind kind = gen_random == "box" ? SceneKind::Box : SceneKind::Plane;
                if (gen_random == "mixed") kind = (i % 2 == 1) ? SceneKind::Box : SceneKind::Plane;
                char name[32];
                std::snprintf(name, sizeof(name), "scene_%03d", i);
                const fs::path dir = gen_count == 1 ? fs::path(gen_out) : fs::path(gen_out) / name;
                save_scene(gen_scene(random_scene_spec(seed, kind)), dir);
            }
            return kExitOk;
        }

        if (*rec) {
            const TrainConfig cfg = load_config(rec_config);
            const Scene scene = load_scene(rec_scene);
            const Rgb bg = scene_background(scene);
            Trace trace;
            TriangleSurface surface;
            if (rec_mode == "optimize") {
                const TriangleSurface init = init_surface_from_depth(scene.inputs, scene.spec.near, scene.spec.far, cfg);
                const PointCloud* cloud = scene.inputs.cloud ? &*scene.inputs.cloud : nullptr;
                if (cloud && cloud->size() != init.num_vertices()) cloud = nullptr;
                OptimizeResult res = optimize_scene(scene.inputs, init, cloud, cfg, bg);
                surface = std::move(res.surface);
                trace = std::move(res.trace);
            } else {
                if (rec_model.empty()) {
                    err << "error: --mode feedforward requires --model\n\n" << rec->help();
                    return kExitUsage;
                }
                surface = predict_surface(FeedForwardModel::load(rec_model), scene.inputs, scene.spec.near,
                                          scene.spec.far);
            }
            export_mesh(surface, rec_out, mesh_format_from_path(rec_out));
            if (!rec_metrics.empty()) {
                std::string text = trace_jsonl(trace);
                if (!scene.targets.views.empty()) {
                    // score what was written, so a later `eval` reproduces it
                    const TriangleSurface written = import_mesh(rec_out);
                    nlohmann::json line;
                    line["eval"] = eval_json(eval_views(written, scene.targets, bg), bg);
                    text += line.dump() + "\n";
                }
                write_text(rec_metrics, text);
            }
            return kExitOk;
        }

        if (*ren) {
            const TriangleSurface mesh = import_mesh(ren_mesh);
            const Camera cam = load_camera(ren_camera);
            const RenderOutput r = rasterize(mesh, cam, parse_rgb(ren_bg));
            if (fs::path(ren_out).extension() == ".pfm") {
                save_pfm(r.color, ren_out);
            } else {
                write_png(r.color, ren_out);
            }
            return kExitOk;
        }

        if (*ev) {
            const TriangleSurface mesh = import_mesh(ev_mesh);
            const Scene scene = load_scene(ev_targets);
            const Rgb bg = ev_bg.empty() ? scene_background(scene) : parse_rgb(ev_bg);
            const std::string text = eval_json(eval_views(mesh, scene.targets, bg), bg).dump(2) + "\n";
            if (ev_out.empty()) {
                out << text;
            } else {
                write_text(ev_out, text);
            }
            return kExitOk;
        }

        if (*ex) {
            export_mesh(import_mesh(ex_mesh), ex_out, ex_format == "obj" ? MeshFormat::Obj : MeshFormat::Ply);
            return kExitOk;
        }

        if (*gc) {
            GradCheckOptions opts;
            opts.component = *parse_grad_component(gc_component);
            opts.seed = gc_seed;
            opts.probes = gc_probes;
            const GradCheckReport report = grad_check(opts);
            const std::string text = to_json(report).dump(2) + "\n";
            out << text;
            if (!gc_out.empty()) write_text(gc_out, text);
            if (!report.passed()) {
                err << "grad-check failed: " << report.failures << " of " << report.probes.size()
                    << " probes above tolerance\n";
                return kExitNumerical;
            }
            return kExitOk;
        }

        if (*tr) {
            const TrainConfig cfg = load_config(tr_config);
            std::vector<Scene> scenes;
            for (const fs::path& dir : dataset_scenes(tr_dataset)) scenes.push_back(load_scene(dir));
            std::vector<TrainingScene> data;
            for (const Scene& s : scenes) data.push_back(training_scene(s));
            const FeedForwardResult res = train_feedforward(data, FeedForwardModel::create(cfg), cfg);
            res.model.save(tr_out);
            if (!tr_metrics.empty()) write_text(tr_metrics, trace_jsonl(res.trace));
            return kExitOk;
        }
    } catch (const Error& e) {
        err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
        return e.is_numerical() ? kExitNumerical : kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace trisplat
