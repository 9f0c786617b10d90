#include "splat/densify.hpp"
#include "splat/eval.hpp"
#include "splat/io.hpp"
#include "splat/optim.hpp"
#include "splat/raster.hpp"
#include "splat/synth.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace splat;

namespace {

json read_json_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw CorruptFileError("bad JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

void write_json_file(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << j.dump(2) << "\n";
}

std::vector<ViewBundle> load_views(const JobConfig& cfg, const fs::path& base) {
    std::vector<ViewBundle> views;
    for (const auto& spec : cfg.views) views.push_back(load_view(spec, base));
    if (views.empty()) throw Error("job config has no views");
    return views;
}

std::vector<CameraModel> cameras_of(const std::vector<ViewBundle>& views) {
    std::vector<CameraModel> cams;
    for (const auto& v : views) cams.push_back(v.camera);
    return cams;
}

// Voxel size used for depth fusion: a small fraction of the scene extent.
double fusion_voxel(const GaussianScene& s) { return 0.02 * std::max(scene_extent(s), 1e-6); }

int cmd_synth(const std::string& shape, int grid, int image_size, int n_views, uint64_t seed,
              double pose_rot, double pose_trans, const fs::path& out_dir) {
    SynthSpec spec;
    spec.shape = shape_from_string(shape);
    spec.grid = grid;
    spec.image_size = image_size;
    spec.n_views = n_views;
    spec.seed = seed;
    spec.noise.pose_rot_deg = pose_rot;
    spec.noise.pose_trans_frac = pose_trans;
    const SynthResult r = synth_scene(spec);

    fs::create_directories(out_dir);
    json views = json::array();
    for (size_t i = 0; i < r.views.size(); ++i) {
        char img[64], dep[64], msk[64];
        std::snprintf(img, sizeof(img), "view_%02zu.ppm", i);
        std::snprintf(dep, sizeof(dep), "depth_%02zu.pfm", i);
        std::snprintf(msk, sizeof(msk), "mask_%02zu.pgm", i);
        write_ppm(out_dir / img, r.views[i].image, 16);
        write_pfm(out_dir / dep, *r.views[i].mono_depth);
        ImageD m(image_size, image_size, 1);
        for (size_t k = 0; k < m.data.size(); ++k) m.data[k] = (*r.views[i].mask).data[k];
        write_pgm(out_dir / msk, m, 8);
        views.push_back({{"image", img},
                         {"depth", dep},
                         {"mask", msk},
                         {"camera", camera_to_json(r.views[i].camera)}});
    }
    write_json_file(out_dir / "job.json",
                    json{{"seed", seed},
                         {"views", views},
                         {"backproject", {{"stride", 4}}},
                         {"out_dir", "."}});

    write_scene(out_dir / "gt_scene.spl", r.gt_scene);
    write_ppm(out_dir / "held_out.ppm", r.held_out.image, 16);
    ImageD hm(image_size, image_size, 1);
    for (size_t k = 0; k < hm.data.size(); ++k) hm.data[k] = (*r.held_out.mask).data[k];
    write_pgm(out_dir / "held_out_mask.pgm", hm, 8);
    json gt_cams = json::array();
    for (const auto& c : r.gt_cameras) gt_cams.push_back(camera_to_json(c));
    write_json_file(out_dir / "gt.json",
                    json{{"scene", "gt_scene.spl"},
                         {"cameras", gt_cams},
                         {"held_out",
                          {{"image", "held_out.ppm"},
                           {"mask", "held_out_mask.pgm"},
                           {"camera", camera_to_json(r.held_out.camera)}}}});
    std::cout << "synth: wrote fixture with " << r.gt_scene.primitives.size()
              << " gt primitives to " << out_dir.string() << "\n";
    return 0;
}

int cmd_init(const fs::path& config, const fs::path& out_scene) {
    const JobConfig cfg = read_job_config(config);
    const fs::path base = config.has_parent_path() ? config.parent_path() : fs::path(".");
    const std::vector<ViewBundle> views = load_views(cfg, base);

    const GaussianScene sparse = backproject(views, cfg.backproject);
    const GaussianScene dense = densify_scene(sparse, cfg.densify);
    const GaussianScene pruned =
        prune_by_contribution(dense, cameras_of(views), cfg.prune_fraction);
    write_scene(out_scene, pruned);
    std::cout << "init: " << sparse.primitives.size() << " backprojected -> "
              << dense.primitives.size() << " densified -> " << pruned.primitives.size()
              << " after prune\n";
    return 0;
}

int cmd_optimize(const fs::path& config, const fs::path& scene_path, const fs::path& out_dir,
                 int iterations, bool deterministic) {
    const JobConfig cfg = read_job_config(config);
    const fs::path base = config.has_parent_path() ? config.parent_path() : fs::path(".");
    std::vector<ViewBundle> views = load_views(cfg, base);
    const GaussianScene scene = read_scene(scene_path);

    OptimConfig oc = cfg.optim;
    oc.loss = cfg.loss;
    oc.prune_fraction = cfg.prune_fraction;
    if (iterations >= 0) oc.iterations = iterations;
    oc.render.deterministic = deterministic;
    const OptimResult result = optimize(scene, views, oc);

    fs::create_directories(out_dir);
    write_scene(out_dir / "scene.spl", result.scene);
    json cams = json::array();
    for (const auto& c : result.cameras) cams.push_back(camera_to_json(c));
    write_json_file(out_dir / "cameras.json", json{{"cameras", cams}});

    std::map<std::string, std::string> log;
    if (!result.report.iterations.empty()) {
        const auto& first = result.report.iterations.front();
        const auto& last = result.report.iterations.back();
        log["loss_first"] = format_metric(first.total);
        log["loss_last"] = format_metric(last.total);
        for (const auto& [k, v] : last.terms) log["term_" + k] = format_metric(v);
    }
    log["iterations"] = std::to_string(result.report.iterations.size());
    log["primitives"] = std::to_string(result.scene.primitives.size());
    write_report(out_dir / "optimize_log.txt", log);
    std::cout << "optimize: " << result.report.iterations.size() << " iterations, "
              << result.scene.primitives.size() << " primitives\n";
    return 0;
}

int cmd_render(const fs::path& config, const fs::path& scene_path, int view_index,
               const fs::path& out_dir) {
    const JobConfig cfg = read_job_config(config);
    if (view_index < 0 || view_index >= static_cast<int>(cfg.views.size()))
        throw Error("render: view index out of range");
    const GaussianScene scene = read_scene(scene_path);
    const RenderOutput r = render(scene, cfg.views[view_index].camera);
    fs::create_directories(out_dir);
    write_ppm(out_dir / "render.ppm", r.color, 16);
    write_pfm(out_dir / "render_depth.pfm", r.depth);
    std::cout << "render: wrote view " << view_index << " to " << out_dir.string() << "\n";
    return 0;
}

int cmd_prune(const fs::path& config, const fs::path& scene_path, double fraction,
              const fs::path& out_scene) {
    const JobConfig cfg = read_job_config(config);
    const fs::path base = config.has_parent_path() ? config.parent_path() : fs::path(".");
    const std::vector<ViewBundle> views = load_views(cfg, base);
    const GaussianScene scene = read_scene(scene_path);
    const GaussianScene pruned = prune_by_contribution(scene, cameras_of(views), fraction);
    write_scene(out_scene, pruned);
    std::cout << "prune: " << scene.primitives.size() << " -> " << pruned.primitives.size()
              << "\n";
    return 0;
}

int cmd_eval(const fs::path& config, const fs::path& gt_path, const fs::path& scene_path,
             const fs::path& cameras_path, const fs::path& out_report) {
    const JobConfig cfg = read_job_config(config);
    const fs::path base = config.has_parent_path() ? config.parent_path() : fs::path(".");
    const fs::path gt_base = gt_path.has_parent_path() ? gt_path.parent_path() : fs::path(".");
    const GaussianScene scene = read_scene(scene_path);

    std::vector<CameraModel> est_cams;
    if (!cameras_path.empty()) {
        const json jcams = read_json_file(cameras_path);
        for (const auto& jc : jcams.at("cameras")) est_cams.push_back(camera_from_json(jc));
    } else {
        for (const auto& v : cfg.views) est_cams.push_back(v.camera);
    }

    const json gt = read_json_file(gt_path);
    const GaussianScene gt_scene = read_scene(gt_base / gt.at("scene").get<std::string>());
    std::vector<CameraModel> gt_cams;
    for (const auto& jc : gt.at("cameras")) gt_cams.push_back(camera_from_json(jc));

    const double voxel = fusion_voxel(gt_scene);
    const std::vector<Vec3> gt_cloud = fuse_depth(gt_scene, gt_cams, voxel);
    const std::vector<Vec3> est_cloud = fuse_depth(scene, est_cams, voxel);

    std::map<std::string, std::string> report;
    const AteResult ate = ate_rmse(est_cams, gt_cams);
    // The optimized solution lives in its own gauge; register it onto the
    // ground-truth frame via the camera-center alignment before comparing
    // clouds, mirroring the pose registration used for ATE.
    std::vector<Vec3> est_aligned;
    est_aligned.reserve(est_cloud.size());
    for (const auto& p : est_cloud) est_aligned.push_back(ate.alignment.apply(p));
    report["cd"] = format_metric(chamfer_distance(est_aligned, gt_cloud));
    report["ate_rotation_deg"] = format_metric(ate.rotation_rmse_deg);
    report["ate_translation"] = format_metric(ate.translation_rmse);

    const auto& jh = gt.at("held_out");
    const CameraModel held_cam = camera_from_json(jh.at("camera"));
    const ImageD held_img = read_ppm(gt_base / jh.at("image").get<std::string>());
    std::optional<ImageB> held_mask;
    if (jh.contains("mask")) {
        const ImageD m = read_pgm(gt_base / jh.at("mask").get<std::string>());
        ImageB mb(m.height, m.width, 1);
        for (size_t i = 0; i < m.data.size(); ++i) mb.data[i] = m.data[i] > 0.5 ? 1 : 0;
        held_mask = std::move(mb);
    }
    // The optimized gauge can differ from ground truth; express the held-out
    // camera in the estimated frame before rendering.
    std::vector<Vec3> gt_centers, est_centers;
    for (const auto& c : gt_cams) gt_centers.push_back(c.center());
    for (const auto& c : est_cams) est_centers.push_back(c.center());
    const SimTransform gauge = umeyama_align(gt_centers, est_centers, true);
    const RenderOutput held_render = render(scene, transform_camera(held_cam, gauge));
    report["psnr_holdout"] =
        format_metric(psnr(held_render.color, held_img, held_mask ? &*held_mask : nullptr));
    report["primitives"] = std::to_string(scene.primitives.size());

    write_report(out_report, report);
    std::cout << "eval: report written to " << out_report.string() << "\n";
    (void)base;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentiable 2D Gaussian splatting pipeline"};
    app.require_subcommand(1);

    std::string shape = "plane", config, scene_path, cameras_path, gt_path;
    std::string out = "out";
    int grid = 24, image_size = 128, n_views = 3, view_index = 0, iterations = -1;
    uint64_t seed = 0;
    double pose_rot = 0.0, pose_trans = 0.0, fraction = 0.05;
    bool deterministic = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic fixture");
    synth->add_option("--shape", shape, "plane | box-room | sphere | corner");
    synth->add_option("--grid", grid);
    synth->add_option("--image-size", image_size);
    synth->add_option("--views", n_views);
    synth->add_option("--seed", seed);
    synth->add_option("--pose-rot-deg", pose_rot);
    synth->add_option("--pose-trans-frac", pose_trans);
    synth->add_option("--out", out)->required();

    auto* init = app.add_subcommand("init", "backproject + densify + prune");
    init->add_option("--config", config)->required();
    init->add_option("--out", out)->required();

    auto* optimize = app.add_subcommand("optimize", "run the optimization loop");
    optimize->add_option("--config", config)->required();
    optimize->add_option("--scene", scene_path)->required();
    optimize->add_option("--iterations", iterations);
    optimize->add_flag("--deterministic", deterministic);
    optimize->add_option("--seed", seed);
    optimize->add_option("--out", out)->required();

    auto* render_cmd = app.add_subcommand("render", "render one configured view");
    render_cmd->add_option("--config", config)->required();
    render_cmd->add_option("--scene", scene_path)->required();
    render_cmd->add_option("--view", view_index);
    render_cmd->add_option("--out", out)->required();

    auto* prune = app.add_subcommand("prune", "contribution pruning");
    prune->add_option("--config", config)->required();
    prune->add_option("--scene", scene_path)->required();
    prune->add_option("--fraction", fraction);
    prune->add_option("--out", out)->required();

    auto* eval = app.add_subcommand("eval", "metrics report");
    eval->add_option("--config", config)->required();
    eval->add_option("--gt", gt_path)->required();
    eval->add_option("--scene", scene_path)->required();
    eval->add_option("--cameras", cameras_path);
    eval->add_option("--out", out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed())
            return cmd_synth(shape, grid, image_size, n_views, seed, pose_rot, pose_trans, out);
        if (init->parsed()) return cmd_init(config, out);
        if (optimize->parsed()) return cmd_optimize(config, scene_path, out, iterations,
                                                    deterministic);
        if (render_cmd->parsed()) return cmd_render(config, scene_path, view_index, out);
        if (prune->parsed()) return cmd_prune(config, scene_path, fraction, out);
        if (eval->parsed()) return cmd_eval(config, gt_path, scene_path, cameras_path, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
