// Command-line front end: dataset synthesis, training, rendering, EKF
// trajectory refinement, evaluation, and flow visualization.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "flowsplat/dataset.hpp"
#include "flowsplat/error.hpp"
#include "flowsplat/image_io.hpp"
#include "flowsplat/metrics.hpp"
#include "flowsplat/parallel.hpp"
#include "flowsplat/rasterizer.hpp"
#include "flowsplat/trainer.hpp"
#include "flowsplat/tvr.hpp"

namespace fs = std::filesystem;
using namespace flowsplat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string frame_path(const std::string& dir, const char* prefix, int k,
                       const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s/%s_%04d.%s", dir.c_str(), prefix, k, ext);
    return buf;
}

int run_synth(const std::string& recipe_path, const std::string& out_dir,
              int64_t seed_override, int workers) {
    set_worker_count(workers);
    SceneRecipe recipe = load_recipe(recipe_path);
    if (seed_override >= 0) recipe.seed = static_cast<uint64_t>(seed_override);
    write_synthetic_dataset(recipe, out_dir);
    std::cout << "wrote dataset to " << out_dir << "\n";
    return kExitOk;
}

int run_train(const std::string& dataset_dir, const std::string& config_path,
              const std::string& out_dir, const std::string& log_path,
              int64_t seed_override, int workers_override) {
    TrainConfig cfg =
        config_path.empty() ? TrainConfig{} : load_train_config(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    if (workers_override > 0) cfg.workers = workers_override;
    const Dataset dataset = load_dataset(dataset_dir);
    const TrainLog log = run_training(dataset, cfg, out_dir);
    if (!log_path.empty()) {
        std::ofstream out(log_path, std::ios::binary);
        if (!out) throw DataError("cannot write " + log_path);
        out << log.to_csv();
    }
    std::cout << "trained " << cfg.iterations << " iterations, checkpoint at "
              << out_dir << "\n";
    return kExitOk;
}

std::vector<int> parse_frames(const std::string& spec, int n_frames) {
    std::vector<int> frames;
    if (spec.empty()) {
        for (int k = 0; k < n_frames; ++k) frames.push_back(k);
        return frames;
    }
    std::stringstream ss(spec);
    std::string token;
    while (std::getline(ss, token, ',')) {
        const int k = std::stoi(token);
        if (k < 0 || k >= n_frames)
            throw DataError("frame index out of range: " + token);
        frames.push_back(k);
    }
    return frames;
}

int run_render(const std::string& ckpt_dir, const std::string& dataset_dir,
               int camera, const std::string& frames_spec, const std::string& out_dir,
               int workers) {
    set_worker_count(workers);
    const Checkpoint ckpt = load_checkpoint(ckpt_dir);
    const std::vector<CameraModel> cameras = load_cameras(dataset_dir + "/cameras.json");
    if (camera < 0 || camera >= static_cast<int>(cameras.size()))
        throw DataError("camera index out of range");
    int n_frames = 0;
    {
        std::ifstream in(dataset_dir + "/meta.json", std::ios::binary);
        if (!in) throw DataError("cannot read " + dataset_dir + "/meta.json");
        nlohmann::json meta = nlohmann::json::parse(in);
        n_frames = meta.at("n_frames").get<int>();
    }
    fs::create_directories(out_dir);
    for (int k : parse_frames(frames_spec, n_frames)) {
        const TimeStamp t = TimeStamp::frame(k, n_frames);
        const RenderBuffers buffers =
            render(ckpt.scene, ckpt.field, t, t.next(), cameras[camera]);
        save_ppm(buffers.color, frame_path(out_dir, "frame", k, "ppm"));
        save_flo(buffers.velocity, frame_path(out_dir, "velocity", k, "flo"));
        save_ppm(flow_to_color(buffers.velocity),
                 frame_path(out_dir, "velocity", k, "ppm"));
    }
    std::cout << "rendered camera " << camera << " to " << out_dir << "\n";
    return kExitOk;
}

int run_refine(const std::string& ckpt_dir, const std::string& dataset_dir,
               const std::string& out_path, double q, double rn, double rel_tol,
               int workers) {
    set_worker_count(workers);
    const Checkpoint ckpt = load_checkpoint(ckpt_dir);
    const Dataset dataset = load_dataset(dataset_dir);

    EKFOptions opts;
    opts.noise.process = q * Matrix3d::Identity();
    opts.noise.observation = rn * Matrix2d::Identity();
    opts.rel_tol = rel_tol;

    // rendered depth per camera and frame from the checkpoint field
    const int n_cams = static_cast<int>(dataset.cameras.size());
    std::vector<std::vector<ImageScalar>> depths(n_cams);
    for (int c = 0; c < n_cams; ++c) {
        depths[c].resize(dataset.n_frames);
        parallel_for(0, dataset.n_frames, [&](int k) {
            const TimeStamp t = TimeStamp::frame(k, dataset.n_frames);
            depths[c][k] =
                render(ckpt.scene, ckpt.field, t, t.next(), dataset.cameras[c]).depth;
        }, 1);
    }

    const FieldMotionModel model(ckpt.field);
    const RefineResult result = refine_trajectories(
        ckpt.scene, model, dataset.cameras, dataset.flows, depths, dataset.n_frames, opts);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + out_path);
    out << trajectories_to_jsonl(result);
    std::cout << "wrote trajectories for " << result.positions.size()
              << " gaussians to " << out_path << "\n";
    return kExitOk;
}

int run_eval(const std::string& ckpt_dir, const std::string& dataset_dir,
             const std::string& cameras_spec, const std::string& out_path, int workers) {
    set_worker_count(workers);
    const Checkpoint ckpt = load_checkpoint(ckpt_dir);
    const Dataset dataset = load_dataset(dataset_dir);
    std::vector<int> cameras;
    {
        std::stringstream ss(cameras_spec);
        std::string token;
        while (std::getline(ss, token, ',')) cameras.push_back(std::stoi(token));
    }
    if (cameras.empty()) cameras.push_back(0);
    for (int c : cameras)
        if (c < 0 || c >= static_cast<int>(dataset.cameras.size()))
            throw DataError("camera index out of range");
    const EvalReport report = evaluate_scene(ckpt.scene, ckpt.field, dataset, cameras);
    const std::string text = eval_report_to_json(report);
    std::cout << text;
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw DataError("cannot write " + out_path);
        out << text;
    }
    return kExitOk;
}

int run_flowviz(const std::string& in_path, const std::string& out_path,
                double max_magnitude) {
    const ImageVec2 flow = load_flo(in_path);
    save_ppm(flow_to_color(flow, max_magnitude), out_path);
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic Gaussian splatting with velocity-field rendering"};
    app.require_subcommand(1);

    std::string recipe_path, dataset_dir, config_path, out_arg, log_path;
    std::string frames_spec, cameras_spec = "0", in_path, ckpt_dir;
    int camera = 0;
    int workers = 4;
    int64_t seed = -1;
    double q = 1e-4, rn = 0.5, rel_tol = 0.01, max_magnitude = 0.0;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--recipe", recipe_path, "scene recipe JSON")->required();
    synth->add_option("--out", out_arg, "output dataset directory")->required();
    synth->add_option("--seed", seed, "override the recipe seed");
    synth->add_option("--workers", workers, "worker threads");

    auto* train = app.add_subcommand("train", "optimize a scene on a dataset");
    train->add_option("--dataset", dataset_dir, "dataset directory")->required();
    train->add_option("--config", config_path, "train config JSON");
    train->add_option("--out", out_arg, "checkpoint output directory")->required();
    train->add_option("--log", log_path, "training log CSV path");
    train->add_option("--seed", seed, "override the config seed");
    train->add_option("--workers", workers, "worker threads");

    auto* render_cmd = app.add_subcommand("render", "render frames from a checkpoint");
    render_cmd->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    render_cmd->add_option("--dataset", dataset_dir, "dataset directory (cameras/meta)")
        ->required();
    render_cmd->add_option("--camera", camera, "camera index");
    render_cmd->add_option("--frames", frames_spec, "comma-separated frames (default all)");
    render_cmd->add_option("--out", out_arg, "output directory")->required();
    render_cmd->add_option("--workers", workers, "worker threads");

    auto* refine = app.add_subcommand("refine", "EKF trajectory refinement");
    refine->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    refine->add_option("--dataset", dataset_dir, "dataset directory (flows)")->required();
    refine->add_option("--out", out_arg, "trajectory JSON-lines path")->required();
    refine->add_option("--process-noise", q, "process noise variance (world^2)");
    refine->add_option("--observation-noise", rn, "observation noise variance (px^2)");
    refine->add_option("--rel-tol", rel_tol, "surface filter depth slack");
    refine->add_option("--workers", workers, "worker threads");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    eval_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
    eval_cmd->add_option("--cameras", cameras_spec, "comma-separated camera indices");
    eval_cmd->add_option("--out", out_arg, "report JSON path");
    eval_cmd->add_option("--workers", workers, "worker threads");

    auto* flowviz = app.add_subcommand("flowviz", "false-color a .flo file");
    flowviz->add_option("--in", in_path, ".flo input")->required();
    flowviz->add_option("--out", out_arg, "PPM output")->required();
    flowviz->add_option("--max-magnitude", max_magnitude, "color wheel saturation radius");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed()) return run_synth(recipe_path, out_arg, seed, workers);
        if (train->parsed())
            return run_train(dataset_dir, config_path, out_arg, log_path, seed, workers);
        if (render_cmd->parsed())
            return run_render(ckpt_dir, dataset_dir, camera, frames_spec, out_arg,
                              workers);
        if (refine->parsed())
            return run_refine(ckpt_dir, dataset_dir, out_arg, q, rn, rel_tol, workers);
        if (eval_cmd->parsed())
            return run_eval(ckpt_dir, dataset_dir, cameras_spec, out_arg, workers);
        if (flowviz->parsed()) return run_flowviz(in_path, out_arg, max_magnitude);
    } catch (const NonFiniteLoss& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
